//! The `histobench` command line: train, eval, ensemble, synth and report.
//!
//! Commands read an optional TOML run config; flags override file values and
//! the resolved config is written to `resolved_config.toml` in the output
//! directory. Exit codes: 0 success, 1 usage/config/parameter errors,
//! 2 data, I/O and checkpoint errors, 3 non-finite training.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset};
use crate::ensemble::{self, TieBreak, VoteConfig, CONCAT_DISPLAY_NAME, CONCAT_NETWORK_NAME};
use crate::error::Error;
use crate::metrics::{self, MetricsReport, DEFAULT_THRESHOLD};
use crate::nn::{self, Architecture, BackboneConfig, BackboneKind, Network, TrainingState};
use crate::optim::{self, TrainingConfig};
use crate::seeds;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const CHECKPOINT_FILE: &str = "model.hbck";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MARKDOWN: &str = "report.md";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Parser, Debug)]
#[command(name = "histobench", version, about = "Train and evaluate histopathologic patch classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one architecture and write a checkpoint plus its history.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write the five-metric report.
    Eval(EvalArgs),
    /// Combine trained models by majority vote or as a jointly trained network.
    Ensemble(EnsembleArgs),
    /// Write a synthetic dataset as PNG files plus labels.csv.
    Synth(SynthArgs),
    /// Merge report files into one table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    mode: EnsembleMode,
    #[command(flatten)]
    common: CommonArgs,
    /// Member checkpoint; repeat for each member.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Starting weights of a concatenation ensemble.
    #[arg(long, value_enum)]
    init: Option<EnsembleInit>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report JSON files written by eval or ensemble.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Also write report.md and report.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnsembleMode {
    Vote,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleInit {
    #[default]
    FromCheckpoints,
    Scratch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    PcamH5,
    ImageDir,
}

/// Where a dataset lives and which part of it a command uses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: Option<DataFormat>,
    /// Image directory, or the directory holding the PCam HDF5 files.
    pub path: Option<PathBuf>,
    /// Labels CSV of an image directory; defaults to `<path>/labels.csv`.
    pub labels: Option<PathBuf>,
    /// PCam split name (`train`, `valid`, `test`).
    pub split: Option<String>,
    /// Hold out this stratified fraction as the test part: training uses
    /// the rest, evaluation uses the held-out part.
    pub test_fraction: Option<f64>,
    pub cache_budget_mb: Option<usize>,
}

/// Optional overrides of [`TrainingConfig`]; the seed lives at the top level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub augment: Option<bool>,
    pub validation_fraction: Option<f64>,
}

/// Width and depth of the residual and inception models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub stem_channels: Option<usize>,
    pub stage_channels: Option<Vec<usize>>,
    pub blocks_per_stage: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub threshold: Option<f64>,
    pub tie_break: Option<TieBreak>,
    pub init: Option<EnsembleInit>,
}

/// Declarative run description shared by all commands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: Option<Architecture>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    /// Evaluation data of a concatenation ensemble when it differs from `data`.
    pub eval_data: Option<DataConfig>,
    pub training: TrainingSection,
    pub backbone: BackboneSection,
    pub ensemble: EnsembleSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Training settings with `default_lr` filling an unset learning rate.
    pub fn training_config(&self, default_lr: f64) -> TrainingConfig {
        let t = &self.training;
        let d = TrainingConfig::default();
        TrainingConfig {
            learning_rate: t.learning_rate.unwrap_or(default_lr),
            epochs: t.epochs.unwrap_or(d.epochs),
            patience: t.patience.unwrap_or(d.patience),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            beta1: t.beta1.unwrap_or(d.beta1),
            beta2: t.beta2.unwrap_or(d.beta2),
            epsilon: t.epsilon.unwrap_or(d.epsilon),
            augment: t.augment.unwrap_or(d.augment),
            seed: self.seed,
            validation_fraction: t.validation_fraction.unwrap_or(d.validation_fraction),
            log_path: None,
        }
    }

    /// Write every training value back so the snapshot is explicit.
    fn resolve_training(&mut self, cfg: &TrainingConfig) {
        self.training = TrainingSection {
            learning_rate: Some(cfg.learning_rate),
            epochs: Some(cfg.epochs),
            patience: Some(cfg.patience),
            batch_size: Some(cfg.batch_size),
            beta1: Some(cfg.beta1),
            beta2: Some(cfg.beta2),
            epsilon: Some(cfg.epsilon),
            augment: Some(cfg.augment),
            validation_fraction: Some(cfg.validation_fraction),
        };
    }

    fn batch_size(&self) -> usize {
        self.training.batch_size.unwrap_or(TrainingConfig::default().batch_size)
    }

    fn backbone_config(&self, input_shape: [usize; 3]) -> BackboneConfig {
        let b = &self.backbone;
        let d = BackboneConfig::default();
        BackboneConfig {
            input_shape,
            stem_channels: b.stem_channels.unwrap_or(d.stem_channels),
            stage_channels: b.stage_channels.clone().unwrap_or(d.stage_channels),
            blocks_per_stage: b.blocks_per_stage.unwrap_or(d.blocks_per_stage),
            dropout: b.dropout.unwrap_or(d.dropout),
        }
    }
}

#[derive(Debug)]
enum Failure {
    /// Bad invocation or config: exit 1.
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::UndefinedMetric(_) => 1,
        Error::NonFinite(_) => 3,
        Error::Dimension(_)
        | Error::State(_)
        | Error::Corrupt { .. }
        | Error::Format(_)
        | Error::Load(_)
        | Error::Io { .. } => 2,
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(common: &CommonArgs) -> Outcome<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(path) = &common.data {
        cfg.data.path = Some(path.clone());
    }
    if let Some(format) = common.format {
        cfg.data.format = Some(format);
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Outcome<PathBuf> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Failure::Usage("no output directory (pass --out or set `out`)".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

/// Write via a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> crate::Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_snapshot(out: &Path, cfg: &RunConfig) -> crate::Result<()> {
    write_atomic(&out.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    Eval,
}

/// Fill the format and default split so the snapshot names exactly what was read.
fn resolve_data(cfg: &mut DataConfig, role: Role) -> Outcome<()> {
    let path = cfg
        .path
        .clone()
        .ok_or_else(|| Failure::Usage("no dataset (pass --data or set data.path)".into()))?;
    if cfg.format.is_none() {
        let image_dir = cfg.labels.is_some() || path.join("labels.csv").is_file();
        cfg.format = Some(if image_dir { DataFormat::ImageDir } else { DataFormat::PcamH5 });
    }
    match cfg.format {
        Some(DataFormat::ImageDir) => {
            cfg.labels.get_or_insert_with(|| path.join("labels.csv"));
        }
        _ => {
            let split = if role == Role::Train { "train" } else { "test" };
            cfg.split.get_or_insert_with(|| split.into());
        }
    }
    if let Some(f) = cfg.test_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(Failure::Usage(format!("data.test_fraction must lie in (0, 1), got {f}")));
        }
    }
    Ok(())
}

/// A loaded dataset plus the sample ids used in prediction files.
struct Loaded {
    dataset: LabeledDataset,
    ids: Vec<String>,
}

fn load_data(cfg: &DataConfig, seed: u64, role: Role) -> Outcome<Loaded> {
    let path = cfg.path.as_deref().expect("resolved");
    let (dataset, ids) = match cfg.format.expect("resolved") {
        DataFormat::ImageDir => {
            let labels = cfg.labels.as_deref().expect("resolved");
            let ds = data::load_image_dir(path, labels)?;
            (ds, read_ids(labels)?)
        }
        DataFormat::PcamH5 => {
            let split = cfg.split.as_deref().expect("resolved");
            let ds = load_pcam(path, split, cfg.cache_budget_mb)?;
            let ids = (0..ds.len()).map(|i| i.to_string()).collect();
            (ds, ids)
        }
    };
    let dataset = match cfg.test_fraction {
        Some(f) => {
            let (fit, test) = data::split(&dataset, f, seeds::derive(seed, seeds::TEST_SPLIT), true)?;
            if role == Role::Train {
                fit
            } else {
                test
            }
        }
        None => dataset,
    };
    let ids = dataset.source_indices().iter().map(|&i| ids[i].clone()).collect();
    log::info!("loaded {} ({} samples)", dataset.describe(), dataset.len());
    Ok(Loaded { dataset, ids })
}

fn read_ids(labels_csv: &Path) -> crate::Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(labels_csv).map_err(|e| Error::Load(format!("{}: {e}", labels_csv.display())))?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.get(0).unwrap_or_default().to_string())
                .map_err(|e| Error::Load(format!("{}: {e}", labels_csv.display())))
        })
        .collect()
}

#[cfg(feature = "pcam-h5")]
fn load_pcam(dir: &Path, split: &str, budget_mb: Option<usize>) -> crate::Result<LabeledDataset> {
    let file = |key: &str| dir.join(format!("camelyonpatch_level_2_split_{split}_{key}.h5"));
    let budget = budget_mb.map_or(data::DEFAULT_CACHE_BUDGET, |mb| mb << 20);
    data::load_pcam_h5_with_budget(&file("x"), &file("y"), budget)
}

#[cfg(not(feature = "pcam-h5"))]
fn load_pcam(_dir: &Path, _split: &str, _budget_mb: Option<usize>) -> crate::Result<LabeledDataset> {
    Err(Error::param("this build has no HDF5 support; rebuild with the pcam-h5 feature"))
}

/// Report row label for a network name.
pub fn display_name(network_name: &str) -> String {
    if let Ok(arch) = Architecture::from_str(network_name) {
        return arch.display_name().to_string();
    }
    if network_name.starts_with(CONCAT_NETWORK_NAME) {
        return CONCAT_DISPLAY_NAME.to_string();
    }
    network_name.to_string()
}

fn build_network(cfg: &RunConfig, arch: Architecture, input_shape: [usize; 3]) -> crate::Result<Network> {
    let seed = seeds::derive(cfg.seed, seeds::INIT);
    let kind = match arch {
        Architecture::MiniResnet => BackboneKind::Residual,
        Architecture::MiniInception => BackboneKind::Inception,
        other => return other.build(input_shape, seed),
    };
    nn::build_backbone_with_head(kind, &cfg.backbone_config(input_shape), seed)
}

/// Train, then move the checkpoint and history into place.
fn train_into(
    net: &mut Network,
    train_set: &LabeledDataset,
    training: &TrainingConfig,
    out: &Path,
) -> crate::Result<TrainingState> {
    let history_path = out.join(HISTORY_FILE);
    let history_tmp = tmp_path(&history_path);
    let cfg = TrainingConfig {
        log_path: Some(history_tmp.clone()),
        ..training.clone()
    };
    let (history, state) = optim::train(net, train_set, &cfg)?;
    log::info!(
        "{}: best epoch {} of {} (validation loss {:.4})",
        net.name(),
        history.best_epoch,
        history.epochs.len(),
        history.best_val_loss()
    );
    let ckpt = out.join(CHECKPOINT_FILE);
    let ckpt_tmp = tmp_path(&ckpt);
    nn::save_checkpoint(net, &state, &ckpt_tmp)?;
    fs::rename(&history_tmp, &history_path).map_err(|e| Error::io(&history_path, e))?;
    fs::rename(&ckpt_tmp, &ckpt).map_err(|e| Error::io(&ckpt, e))?;
    Ok(state)
}

fn cmd_train(args: TrainArgs) -> Outcome<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = &args.arch {
        cfg.arch = Some(Architecture::from_str(a).map_err(|e| Failure::Usage(e.to_string()))?);
    }
    let arch = cfg
        .arch
        .ok_or_else(|| Failure::Usage("no architecture (pass --arch or set `arch`)".into()))?;
    resolve_data(&mut cfg.data, Role::Train)?;
    let training = cfg.training_config(arch.default_learning_rate());
    training.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.resolve_training(&training);
    let out = out_dir(&cfg)?;
    write_snapshot(&out, &cfg)?;

    let data = load_data(&cfg.data, cfg.seed, Role::Train)?;
    let mut net = build_network(&cfg, arch, data.dataset.image_shape())?;
    log::info!("{}: {} parameters, learning rate {}", net.name(), net.count_params(), training.learning_rate);
    train_into(&mut net, &data.dataset, &training, &out)?;
    Ok(())
}

fn write_reports(out: &Path, reports: &[MetricsReport]) -> crate::Result<()> {
    let (markdown, json) = metrics::render_report(reports)?;
    write_atomic(&out.join(REPORT_JSON), json.as_bytes())?;
    write_atomic(&out.join(REPORT_MARKDOWN), markdown.as_bytes())?;
    print!("{markdown}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Outcome<()> {
    let mut cfg = load_config(&args.common)?;
    resolve_data(&mut cfg.data, Role::Eval)?;
    let out = out_dir(&cfg)?;
    let (net, _) = nn::load_checkpoint(&args.checkpoint)?;
    cfg.arch = Architecture::from_str(net.name()).ok();
    write_snapshot(&out, &cfg)?;

    let data = load_data(&cfg.data, cfg.seed, Role::Eval)?;
    if data.dataset.image_shape() != net.input_shape() {
        return Err(Error::Dimension(format!(
            "{} expects {:?} images, {} has {:?}",
            args.checkpoint.display(),
            net.input_shape(),
            data.dataset.describe(),
            data.dataset.image_shape()
        ))
        .into());
    }
    let (_, scores) = optim::evaluate(&net, &data.dataset, cfg.batch_size())?;
    let threshold = cfg.ensemble.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let report = MetricsReport::from_scores(display_name(net.name()), &scores, data.dataset.labels(), threshold)?;
    write_reports(&out, &[report])?;
    Ok(())
}

fn cmd_ensemble(args: EnsembleArgs) -> Outcome<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(init) = args.init {
        cfg.ensemble.init = Some(init);
    }
    if args.checkpoints.len() < 2 {
        return Err(Failure::Usage(format!(
            "an ensemble needs at least two --checkpoint members, got {}",
            args.checkpoints.len()
        )));
    }
    resolve_data(&mut cfg.data, if args.mode == EnsembleMode::Vote { Role::Eval } else { Role::Train })?;
    if let Some(eval) = &mut cfg.eval_data {
        resolve_data(eval, Role::Eval)?;
    }
    let threshold = cfg.ensemble.threshold.unwrap_or(DEFAULT_THRESHOLD);
    cfg.ensemble.threshold = Some(threshold);
    let out = out_dir(&cfg)?;
    let members = args
        .checkpoints
        .iter()
        .map(|p| nn::load_checkpoint(p).map(|(net, _)| net))
        .collect::<crate::Result<Vec<_>>>()?;
    match args.mode {
        EnsembleMode::Vote => {
            cfg.ensemble.tie_break.get_or_insert_with(TieBreak::default);
            write_snapshot(&out, &cfg)?;
            let vote = VoteConfig {
                threshold,
                tie_break: cfg.ensemble.tie_break.unwrap_or_default(),
            };
            let data = load_data(&cfg.data, cfg.seed, Role::Eval)?;
            let refs: Vec<&Network> = members.iter().collect();
            let (report, predictions) = ensemble::evaluate_vote(&refs, &data.dataset, &vote, cfg.batch_size())?;
            let csv = out.join(PREDICTIONS_FILE);
            let tmp = tmp_path(&csv);
            predictions.write_csv(&data.ids, &tmp)?;
            fs::rename(&tmp, &csv).map_err(|e| Error::io(&csv, e))?;
            write_reports(&out, &[report])?;
        }
        EnsembleMode::Concat => {
            let init = *cfg.ensemble.init.get_or_insert_with(EnsembleInit::default);
            let training = cfg.training_config(Architecture::MiniResnet.default_learning_rate());
            training.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            cfg.resolve_training(&training);
            if cfg.eval_data.is_none() && cfg.data.test_fraction.is_none() {
                return Err(Failure::Usage(
                    "a concatenation ensemble needs held-out data: set data.test_fraction or an [eval_data] section".into(),
                ));
            }
            write_snapshot(&out, &cfg)?;
            let mut members = members;
            if init == EnsembleInit::Scratch {
                for (k, m) in members.iter_mut().enumerate() {
                    m.reinitialize(seeds::derive(cfg.seed, seeds::INIT).wrapping_add(k as u64 + 1));
                }
            }
            let refs: Vec<&Network> = members.iter().collect();
            let mut joint = ensemble::build_concat_ensemble(&refs, seeds::derive(cfg.seed, seeds::INIT))?;
            let train_data = load_data(&cfg.data, cfg.seed, Role::Train)?;
            log::info!("{}: {} parameters, init {init:?}", joint.name(), joint.count_params());
            train_into(&mut joint, &train_data.dataset, &training, &out)?;
            let eval = match &cfg.eval_data {
                Some(eval) => load_data(eval, cfg.seed, Role::Eval)?,
                None => load_data(&cfg.data, cfg.seed, Role::Eval)?,
            };
            let report = ensemble::evaluate_concat(&joint, &eval.dataset, threshold, cfg.batch_size())?;
            write_reports(&out, &[report])?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthSnapshot {
    n: usize,
    noise: f64,
    seed: u64,
}

fn cmd_synth(args: SynthArgs) -> Outcome<()> {
    let ds = data::synth_center_blob(args.n, args.noise, args.seed)?;
    data::write_image_dir(&ds, &args.out, "synth_")?;
    let snapshot = SynthSnapshot {
        n: args.n,
        noise: args.noise,
        seed: args.seed,
    };
    write_atomic(
        &args.out.join(RESOLVED_CONFIG),
        toml::to_string(&snapshot).expect("plain snapshot").as_bytes(),
    )?;
    let stats = ds.stats();
    log::info!(
        "wrote {} images ({} positive) to {}",
        stats.total,
        stats.positives,
        args.out.display()
    );
    Ok(())
}

/// A report file holds one report or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum ReportFile {
    Many(Vec<MetricsReport>),
    One(MetricsReport),
}

fn cmd_report(args: ReportArgs) -> Outcome<()> {
    let mut reports = Vec::new();
    for path in &args.files {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<ReportFile>(&text) {
            Ok(ReportFile::Many(rs)) => reports.extend(rs),
            Ok(ReportFile::One(r)) => reports.push(r),
            Err(e) => return Err(Failure::Usage(format!("{}: malformed report: {e}", path.display()))),
        }
    }
    for warning in metrics::disambiguate_names(&mut reports) {
        log::warn!("{warning}");
    }
    match &args.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_reports(out, &reports)?;
        }
        None => print!("{}", metrics::render_report(&reports)?.0),
    }
    Ok(())
}
