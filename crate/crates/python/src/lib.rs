//! Python bindings: run configuration, experiments, synthetic data,
//! gradient checking and the two ranking metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coldstart::checkpoint::Checkpoint;
use coldstart::config::RunConfig;
use coldstart::data::{generate_synthetic, Corpus, SyntheticConfig};
use coldstart::eval::{MetricsReport, ScenarioMetrics};
use coldstart::experiment::{self, Experiment};
use coldstart::gradcheck::{run_gradcheck, GradcheckConfig};
use coldstart::meta::MetaState;
use coldstart::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Run configuration. `RunConfig()` holds the MovieLens defaults.
#[pyclass(name = "RunConfig", module = "coldstart", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    /// Profile tuned for small synthetic corpora.
    #[staticmethod]
    fn synthetic() -> Self {
        Self {
            inner: RunConfig::synthetic(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RunConfig = serde_json::from_str(text).map_err(json_err)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(json_err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (self.to_json()?,))
    }

    /// Returns a copy with the keys of `changes` overridden. Unknown keys
    /// and invalid values raise `ValueError`.
    fn update(&self, changes: &Bound<'_, PyDict>) -> PyResult<Self> {
        let text: String = changes.py().import("json")?.call_method1("dumps", (changes,))?.extract()?;
        let patch: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
        let mut merged = serde_json::to_value(&self.inner).map_err(json_err)?;
        if let (Some(base), serde_json::Value::Object(p)) = (merged.as_object_mut(), patch) {
            base.extend(p);
        }
        let inner: RunConfig = serde_json::from_value(merged).map_err(json_err)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("RunConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

fn scenario_dict<'py>(py: Python<'py>, m: &ScenarioMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("count", m.count)?;
    d.set_item("mae", m.mae)?;
    let ndcg = PyDict::new(py);
    for (n, v) in &m.ndcg {
        ndcg.set_item(*n, *v)?;
    }
    d.set_item("ndcg", ndcg)?;
    Ok(d)
}

/// `{"W-W": {...}, ..., "all": {...}}` with `count`, `mae` and `ndcg`
/// (cutoff to value); undefined values are `None`.
fn report_dict<'py>(py: Python<'py>, report: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for m in report.scenarios.iter().chain(std::iter::once(&report.overall)) {
        d.set_item(m.label(), scenario_dict(py, m)?)?;
    }
    Ok(d)
}

/// A corpus prepared under a configuration, plus the current model state.
#[pyclass(name = "Experiment", module = "coldstart")]
struct PyExperiment {
    inner: Experiment,
    state: MetaState,
    epochs_done: usize,
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(config: &PyRunConfig, data_dir: PathBuf) -> PyResult<Self> {
        let corpus = Corpus::load(&data_dir).map_err(to_py)?;
        let inner = Experiment::new(config.inner.clone(), &corpus).map_err(to_py)?;
        let state = inner.initial_state().map_err(to_py)?;
        Ok(Self {
            inner,
            state,
            epochs_done: 0,
        })
    }

    #[getter]
    fn n_train_users(&self) -> usize {
        self.inner.data.train.len()
    }

    #[getter]
    fn n_test_users(&self) -> usize {
        self.inner.data.test.len()
    }

    #[getter]
    fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Trains up to the configured epoch count and returns the training
    /// query MAE of each epoch run.
    fn train(&mut self, py: Python<'_>) -> PyResult<Vec<f64>> {
        let inner = &self.inner;
        let state = &mut self.state;
        let start = self.epochs_done;
        let log = py
            .detach(|| inner.train_from(state, start, |_, _| Ok(())))
            .map_err(to_py)?;
        self.epochs_done = self.epochs_done.max(self.inner.config.epochs);
        Ok(log.iter().map(|m| m.train_query_mae).collect())
    }

    /// Per-scenario test metrics of the current state.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = py.detach(|| self.inner.evaluate(&self.state)).map_err(to_py)?;
        report_dict(py, &report)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        self.inner
            .checkpoint(self.state.clone(), self.epochs_done)
            .save(&path)
            .map_err(to_py)
    }

    /// Replaces the current state; refuses checkpoints of other dimensions.
    fn load_checkpoint(&mut self, path: PathBuf) -> PyResult<()> {
        let ck = Checkpoint::load(&path).map_err(to_py)?;
        if ck.state.dims() != self.inner.dims {
            return Err(PyValueError::new_err(format!(
                "checkpoint dimensions {:?} do not match the data schema {:?}",
                ck.state.dims(),
                self.inner.dims
            )));
        }
        self.state = ck.state;
        self.epochs_done = ck.header.epoch;
        Ok(())
    }
}

/// Writes a clustered synthetic corpus to `out` and returns the number of
/// ratings written.
#[pyfunction]
#[pyo3(signature = (out, users=200, items=100, clusters=2, noise_sd=0.3, ratings_per_user=20, seed=0))]
fn synth(
    out: PathBuf,
    users: usize,
    items: usize,
    clusters: usize,
    noise_sd: f64,
    ratings_per_user: usize,
    seed: u64,
) -> PyResult<usize> {
    let data = generate_synthetic(&SyntheticConfig {
        n_users: users,
        n_items: items,
        n_clusters: clusters,
        noise_sd,
        ratings_per_user,
        seed,
        ..Default::default()
    })
    .map_err(to_py)?;
    data.write(&out).map_err(to_py)?;
    Ok(data.corpus.ratings.len())
}

/// Trains and evaluates the memory model and its no-memory reduction.
/// Returns `{"memory": report, "ablation": report}`.
#[pyfunction]
fn ablate<'py>(py: Python<'py>, config: &PyRunConfig, data_dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let corpus = Corpus::load(&data_dir).map_err(to_py)?;
    let exp = Experiment::new(config.inner.clone(), &corpus).map_err(to_py)?;
    let outcome = py.detach(|| experiment::run_ablation(&exp)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("memory", report_dict(py, &outcome.memory.report)?)?;
    d.set_item("ablation", report_dict(py, &outcome.ablation.report)?)?;
    Ok(d)
}

/// Finite-difference check of every analytic gradient group. Returns
/// `(passed, {group: max_relative_error})`.
#[pyfunction]
#[pyo3(signature = (instances=50, epsilon=1e-5, tolerance=1e-4, seed=0))]
fn gradcheck<'py>(
    py: Python<'py>,
    instances: usize,
    epsilon: f64,
    tolerance: f64,
    seed: u64,
) -> PyResult<(bool, Bound<'py, PyDict>)> {
    let cfg = GradcheckConfig {
        instances,
        epsilon,
        tolerance,
        seed,
        ..Default::default()
    };
    let report = py.detach(|| run_gradcheck(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    for g in &report.groups {
        d.set_item(g.name, g.max_relative_error)?;
    }
    Ok((report.passed(), d))
}

/// Mean absolute error of `(prediction, actual)` pairs, predictions
/// clipped to `rating_range`.
#[pyfunction]
fn mae(pairs: Vec<(f64, f64)>, rating_range: (f64, f64)) -> PyResult<f64> {
    coldstart::eval::mae(&pairs, rating_range).map_err(to_py)
}

/// NDCG@n of `(prediction, actual)` pairs.
#[pyfunction]
fn ndcg_at_n(pairs: Vec<(f64, f64)>, n: usize) -> PyResult<f64> {
    coldstart::eval::ndcg_at_n(&pairs, n).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "coldstart")]
fn coldstart_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_n, m)?)?;
    Ok(())
}
