//! Python bindings: `import histobench`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use histobench_core::data::{self, LabeledDataset};
use histobench_core::ensemble::{self, TieBreak, VoteConfig};
use histobench_core::metrics::{self, MetricsReport};
use histobench_core::nn::{self, Architecture, TrainingState};
use histobench_core::optim::{self, TrainingConfig};
use histobench_core::Error;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Parameter(_) | Error::Dimension(_) | Error::UndefinedMetric(_) => PyValueError::new_err(msg),
        Error::NonFinite(_) => PyArithmeticError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

/// Plain data to Python dicts and lists, through the json module.
fn to_python<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_python<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

// Vec<u8> would surface as bytes.
fn label_list(labels: &[u8]) -> Vec<u32> {
    labels.iter().map(|&y| u32::from(y)).collect()
}

/// Labeled 8-bit images, channel-first.
#[pyclass(name = "Dataset", module = "histobench", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let s = self.inner.stats();
        format!(
            "Dataset({} images, {} positive, {})",
            s.total,
            s.positives,
            self.inner.describe()
        )
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        label_list(self.inner.labels())
    }

    #[getter]
    fn image_shape(&self) -> [usize; 3] {
        self.inner.image_shape()
    }

    /// Raw CHW bytes of one image.
    fn image(&self, index: usize) -> PyResult<Vec<u8>> {
        self.inner.image_bytes(index).map_err(err)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.stats())
    }

    fn subset(&self, positions: Vec<usize>) -> PyResult<Self> {
        Ok(PyDataset {
            inner: self.inner.subset(&positions).map_err(err)?,
        })
    }

    /// `(rest, held_out)` with `held_out` holding `fraction` of the samples.
    #[pyo3(signature = (fraction, seed = 0, stratified = true))]
    fn split(&self, fraction: f64, seed: u64, stratified: bool) -> PyResult<(Self, Self)> {
        let (a, b) = data::split(&self.inner, fraction, seed, stratified).map_err(err)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }))
    }

    /// Write PNG files plus labels.csv; returns the CSV path.
    #[pyo3(signature = (dir, prefix = "img_"))]
    fn write_image_dir(&self, dir: PathBuf, prefix: &str) -> PyResult<PathBuf> {
        data::write_image_dir(&self.inner, &dir, prefix).map_err(err)
    }
}

#[pyclass(name = "Network", module = "histobench")]
struct PyNetwork {
    inner: nn::Network,
    state: TrainingState,
}

fn wrap(inner: nn::Network) -> PyNetwork {
    PyNetwork {
        inner,
        state: TrainingState::default(),
    }
}

#[pymethods]
impl PyNetwork {
    /// Build `mlp_baseline`, `conv_baseline`, `mini_resnet` or `mini_inception`.
    #[staticmethod]
    #[pyo3(signature = (arch, seed = 0, input_shape = None))]
    fn build(arch: &str, seed: u64, input_shape: Option<[usize; 3]>) -> PyResult<Self> {
        let arch: Architecture = arch.parse().map_err(err)?;
        let net = arch.build(input_shape.unwrap_or(nn::IMAGE_SHAPE), seed).map_err(err)?;
        Ok(wrap(net))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, state) = nn::load_checkpoint(&path).map_err(err)?;
        Ok(PyNetwork { inner, state })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_checkpoint(&self.inner, &self.state, &path).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn input_shape(&self) -> [usize; 3] {
        self.inner.input_shape()
    }

    #[getter]
    fn trained_epochs(&self) -> usize {
        self.inner.trained_epochs()
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    fn __repr__(&self) -> String {
        format!("Network({}, {} parameters)", self.inner.name(), self.inner.count_params())
    }

    /// Positive-class probabilities in dataset order.
    #[pyo3(signature = (dataset, batch_size = 64))]
    fn predict(&self, dataset: &PyDataset, batch_size: usize) -> PyResult<Vec<f64>> {
        Ok(optim::evaluate(&self.inner, &dataset.inner, batch_size).map_err(err)?.1)
    }

    /// Train in place with early stopping; returns one dict per epoch.
    ///
    /// The learning rate defaults to the architecture's reference value.
    #[pyo3(signature = (
        dataset, learning_rate = None, epochs = 50, patience = 5, batch_size = 64,
        augment = true, seed = 0, validation_fraction = 0.1, log_path = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &PyDataset,
        learning_rate: Option<f64>,
        epochs: usize,
        patience: usize,
        batch_size: usize,
        augment: bool,
        seed: u64,
        validation_fraction: f64,
        log_path: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let default_lr = match self.inner.name().parse::<Architecture>() {
            Ok(a) => a.default_learning_rate(),
            Err(_) => Architecture::MiniResnet.default_learning_rate(),
        };
        let cfg = TrainingConfig {
            learning_rate: learning_rate.unwrap_or(default_lr),
            epochs,
            patience,
            batch_size,
            augment,
            seed,
            validation_fraction,
            log_path,
            ..TrainingConfig::default()
        };
        let (history, state) = optim::train(&mut self.inner, &dataset.inner, &cfg).map_err(err)?;
        self.state = state;
        to_python(py, &history.epochs)
    }

    /// Five-metric report as a dict.
    #[pyo3(signature = (dataset, threshold = 0.5, batch_size = 64))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        threshold: f64,
        batch_size: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (_, scores) = optim::evaluate(&self.inner, &dataset.inner, batch_size).map_err(err)?;
        let name = histobench_core::cli::display_name(self.inner.name());
        let report = MetricsReport::from_scores(name, &scores, dataset.inner.labels(), threshold).map_err(err)?;
        to_python(py, &report)
    }
}

#[pyfunction]
#[pyo3(signature = (n, noise = 0.1, seed = 0))]
fn synth_center_blob(n: usize, noise: f64, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::synth_center_blob(n, noise, seed).map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (dir, labels_csv = None))]
fn load_image_dir(dir: PathBuf, labels_csv: Option<PathBuf>) -> PyResult<PyDataset> {
    let labels = labels_csv.unwrap_or_else(|| dir.join("labels.csv"));
    Ok(PyDataset {
        inner: data::load_image_dir(&dir, &labels).map_err(err)?,
    })
}

#[pyfunction]
fn load_pcam_h5(x_path: PathBuf, y_path: PathBuf) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::load_pcam_h5(&x_path, &y_path).map_err(err)?,
    })
}

#[pyfunction]
fn auc_roc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::auc_roc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    metrics::f1_score(precision, recall)
}

#[pyfunction]
#[pyo3(signature = (model, scores, labels, threshold = 0.5))]
fn metrics_report<'py>(
    py: Python<'py>,
    model: &str,
    scores: Vec<f64>,
    labels: Vec<u8>,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let report = MetricsReport::from_scores(model, &scores, &labels, threshold).map_err(err)?;
    to_python(py, &report)
}

/// Markdown table for a list of report dicts.
#[pyfunction]
fn render_markdown(reports: &Bound<'_, PyAny>) -> PyResult<String> {
    let reports: Vec<MetricsReport> = from_python(reports)?;
    Ok(metrics::render_markdown(&reports))
}

#[pyfunction]
#[pyo3(signature = (score_sets, threshold = 0.5, tie_break = "higher_confidence"))]
fn majority_vote(score_sets: Vec<Vec<f64>>, threshold: f64, tie_break: &str) -> PyResult<Vec<u32>> {
    let cfg = VoteConfig {
        threshold,
        tie_break: tie_break.parse::<TieBreak>().map_err(err)?,
    };
    Ok(label_list(&ensemble::majority_vote(&score_sets, &cfg).map_err(err)?))
}

/// Majority-vote report (AUC is None) and the voted labels.
#[pyfunction]
#[pyo3(signature = (members, dataset, threshold = 0.5, tie_break = "higher_confidence", batch_size = 64))]
fn vote<'py>(
    py: Python<'py>,
    members: Vec<PyRef<'py, PyNetwork>>,
    dataset: &PyDataset,
    threshold: f64,
    tie_break: &str,
    batch_size: usize,
) -> PyResult<(Bound<'py, PyAny>, Vec<u32>)> {
    let cfg = VoteConfig {
        threshold,
        tie_break: tie_break.parse::<TieBreak>().map_err(err)?,
    };
    let nets: Vec<&nn::Network> = members.iter().map(|m| &m.inner).collect();
    let (report, predictions) = ensemble::evaluate_vote(&nets, &dataset.inner, &cfg, batch_size).map_err(err)?;
    Ok((to_python(py, &report)?, label_list(&predictions.labels)))
}

/// Joint network over the members' penultimate features, ready to train.
#[pyfunction]
#[pyo3(signature = (members, seed = 0))]
fn concat_ensemble(members: Vec<PyRef<'_, PyNetwork>>, seed: u64) -> PyResult<PyNetwork> {
    let nets: Vec<&nn::Network> = members.iter().map(|m| &m.inner).collect();
    Ok(wrap(ensemble::build_concat_ensemble(&nets, seed).map_err(err)?))
}

#[pymodule]
mod histobench {
    #[pymodule_export]
    use super::{
        auc_roc, concat_ensemble, f1_score, load_image_dir, load_pcam_h5, majority_vote, metrics_report,
        render_markdown, synth_center_blob, vote, PyDataset, PyNetwork,
    };

    use pyo3::prelude::*;

    #[pymodule_init]
    fn init(_m: &Bound<'_, PyModule>) -> PyResult<()> {
        histobench_core::retain_freed_memory();
        Ok(())
    }
}
