//! Binary cross-entropy, Adam and the early-stopped epoch loop.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, batches, split, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Network, TrainingState};
use crate::seeds;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before the log.
pub const PROB_FLOOR: f64 = 1e-7;

/// Mean binary cross-entropy of `[b, 1]` probabilities and its gradient.
pub fn bce_loss(probs: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let [b, one] = probs.dims2()?;
    if one != 1 || b != labels.len() || b == 0 {
        return Err(Error::dim(format!(
            "loss expects [b, 1] probabilities for {} labels, got {:?}",
            labels.len(),
            probs.shape()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b);
    for (&p, &y) in probs.data().iter().zip(labels) {
        let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let y = f64::from(y);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((p - y) / (p * (1.0 - p)) / b as f64);
    }
    Ok((loss / b as f64, Tensor::new([b, 1], grad)?))
}

/// Gradient of the mean cross-entropy with respect to the output logits, `(p - y) / b`.
///
/// Equal to [`bce_loss`]'s gradient chained through the sigmoid wherever the
/// clamp is inactive, and still nonzero where the sigmoid has saturated.
pub fn bce_logit_gradient(probs: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let [b, one] = probs.dims2()?;
    if one != 1 || b != labels.len() || b == 0 {
        return Err(Error::dim(format!(
            "loss expects [b, 1] probabilities for {} labels, got {:?}",
            labels.len(),
            probs.shape()
        )));
    }
    let grad = probs.data().iter().zip(labels).map(|(&p, &y)| (p - f64::from(y)) / b as f64).collect();
    Tensor::new([b, 1], grad)
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments, one tensor per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn for_shapes<'a>(params: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::for_shapes(net.params().map(|p| p.value.shape()))
    }
}

/// One bias-corrected Adam update. Shapes are checked before anything is written.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {}/{} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let shape = p.shape();
        if grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape {
            return Err(Error::dim(format!(
                "parameter {i} is {shape:?} but gradient is {:?}",
                grads[i].shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
        for (((theta, &g), m), v) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *theta -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Epoch-loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub augment: bool,
    pub seed: u64,
    pub validation_fraction: f64,
    /// JSON-lines history destination, one record per epoch.
    #[serde(skip)]
    pub log_path: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingConfig {
            learning_rate: adam.learning_rate,
            epochs: 50,
            patience: 5,
            batch_size: 64,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            augment: true,
            seed: 0,
            validation_fraction: 0.1,
            log_path: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.patience < 1 {
            return bad("patience must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam constants need 0 <= beta < 1 and epsilon > 0".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Minimum decrease of the validation loss that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based stopping rule over a validation loss sequence.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Record the loss of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        match self.best {
            Some((_, best)) if !(loss < best - MIN_IMPROVEMENT) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    EpochLimit,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.val_loss).collect()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }
}

/// Mean loss and per-sample scores in dataset order, inference mode.
pub fn evaluate(net: &Network, dataset: &LabeledDataset, batch_size: usize) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let mut scores = Vec::with_capacity(dataset.len());
    let mut total = 0.0;
    for batch in batches(dataset, batch_size, None)? {
        let batch = batch?;
        let probs = net.predict(&batch.images)?;
        total += bce_loss(&probs, &batch.labels)?.0 * batch.labels.len() as f64;
        scores.extend_from_slice(probs.data());
    }
    Ok((total / dataset.len() as f64, scores))
}

/// Fraction of scores on the correct side of 0.5 (≥ counts as positive).
pub fn accuracy(scores: &[f64], labels: &[u8]) -> f64 {
    let hits = scores.iter().zip(labels).filter(|(&s, &y)| (s >= 0.5) == (y == 1)).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Hold out a seeded, stratified validation split and train on the rest.
pub fn train(net: &mut Network, dataset: &LabeledDataset, cfg: &TrainingConfig) -> Result<(TrainHistory, TrainingState)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::param("cannot train on an empty dataset"));
    }
    let seed = seeds::derive(cfg.seed, seeds::VALIDATION_SPLIT);
    let (fit, val) = split(dataset, cfg.validation_fraction, seed, true)?;
    train_split(net, &fit, &val, cfg)
}

/// Train with an explicit validation set.
pub fn train_split(
    net: &mut Network,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    cfg: &TrainingConfig,
) -> Result<(TrainHistory, TrainingState)> {
    let batch_size = cfg.batch_size;
    train_with(net, train_set, cfg, |net| {
        let (loss, scores) = evaluate(net, val_set, batch_size)?;
        Ok((loss, accuracy(&scores, val_set.labels())))
    })
}

/// Epoch loop with a caller-supplied validation signal `(loss, accuracy)`.
///
/// Each epoch shuffles, optionally flips, and takes one Adam step per batch;
/// then `validate` runs on the current weights. After `patience` epochs
/// without improvement the loop stops, and the best epoch's weights are
/// restored in either case. The returned state carries the moments of the
/// last step taken.
pub fn train_with<F>(
    net: &mut Network,
    train_set: &LabeledDataset,
    cfg: &TrainingConfig,
    mut validate: F,
) -> Result<(TrainHistory, TrainingState)>
where
    F: FnMut(&Network) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::param("cannot train on an empty dataset"));
    }
    if cfg.epochs == 0 {
        return Err(Error::param("epochs must be >= 1"));
    }
    let mut log = match &cfg.log_path {
        Some(path) => Some((path, BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))),
        None => None,
    };
    let adam = cfg.adam();
    let mut state = AdamState::for_network(net);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = net.param_values();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::EpochLimit;

    for epoch in 1..=cfg.epochs {
        let mut aug_rng = crate::rng(seeds::per_epoch(cfg.seed, seeds::AUGMENT, epoch));
        let mut drop_rng = crate::rng(seeds::per_epoch(cfg.seed, seeds::DROPOUT, epoch));
        let order_seed = seeds::per_epoch(cfg.seed, seeds::SHUFFLE, epoch);
        let mut loss_sum = 0.0;
        for (step, batch) in batches(train_set, cfg.batch_size, Some(order_seed))?.enumerate() {
            let mut batch = batch?;
            if cfg.augment {
                augment_batch(&mut batch.images, &mut aug_rng)?;
            }
            let probs = net.forward(&batch.images, true, &mut drop_rng)?;
            if !probs.is_finite() {
                return Err(Error::NonFinite(format!("non-finite output in epoch {epoch}, batch {}", step + 1)));
            }
            let (loss, _) = bce_loss(&probs, &batch.labels)?;
            let grads = net.backward_logits(&bce_logit_gradient(&probs, &batch.labels)?)?;
            adam_step(net.params_mut().map(|p| &mut p.value), &grads.tensors, &mut state, &adam)?;
            loss_sum += loss * batch.labels.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_accuracy) = validate(net)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: train loss {train_loss}, validation loss {val_loss}"
            )));
        }
        let verdict = stopper.observe(epoch, val_loss);
        if verdict == Verdict::Improved {
            best_params = net.param_values();
        }
        let best_epoch = stopper.best().expect("observed").0;
        let stopping = verdict == Verdict::Stop || epoch == cfg.epochs;
        if verdict == Verdict::Stop {
            stop_reason = StopReason::EarlyStopping;
        }
        let record = EpochRecord {
            model: net.name().to_string(),
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            best_epoch,
            stop_reason: stopping.then_some(stop_reason),
        };
        log::info!(
            "{} epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.4}",
            net.name()
        );
        if let Some((path, w)) = &mut log {
            let line = serde_json::to_string(&record).expect("plain record");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(*path, e))?;
        }
        records.push(record);
        if stopping {
            break;
        }
    }

    let (best_epoch, best_loss) = stopper.best().expect("at least one epoch");
    net.set_param_values(best_params)?;
    net.set_trained_epochs(net.trained_epochs() + records.len());
    let history = TrainHistory {
        epochs: records,
        best_epoch,
        stop_reason,
    };
    let state = TrainingState {
        epoch: history.epochs.len(),
        best_val_loss: Some(best_loss),
        adam: Some(state),
    };
    Ok((history, state))
}

/// Read a JSON-lines training log.
pub fn read_history_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}
