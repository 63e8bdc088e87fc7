//! Python bindings: configuration, reference construction, the tire models and
//! the five pipeline commands. Structured results cross the boundary as plain
//! dicts via JSON.

use std::path::PathBuf;

use drift_forge::equilibrium::{self, EquilibriumConstraint, EquilibriumSpec};
use drift_forge::harness::{self, ExperimentConfig, MetricsReport, Variant};
use drift_forge::mlp::{self, N_FEATURES};
use drift_forge::tire::{self, TireParams};
use drift_forge::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingInput(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Config(_)
        | Error::ShapeMismatch(_)
        | Error::MalformedRow { .. }
        | Error::Json(_)
        | Error::InsufficientSamples(_)
        | Error::LowSpeed { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(|e: Error| PyValueError::new_err(e.to_string()))
}

/// Full experiment configuration.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| to_py(e.into()))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn hash(&self) -> PyResult<String> {
        harness::config_hash(&self.inner).map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn out(&self) -> String {
        self.inner.out.clone()
    }
}

/// Lateral force of the nominal Fiala front tire at the given slip, drive
/// force and load. `c` and `mu` override the nominal parameters.
#[pyfunction]
#[pyo3(signature = (alpha, fx, fz, c = None, mu = None))]
fn fiala_force(alpha: f64, fx: f64, fz: f64, c: Option<f64>, mu: Option<f64>) -> f64 {
    let base = TireParams::default();
    let params = TireParams {
        cornering_stiffness: c.unwrap_or(base.cornering_stiffness),
        mu: mu.unwrap_or(base.mu),
    };
    tire::fiala_lateral_force(alpha, fx, fz, &params)
}

/// Drift equilibrium on a circle of `radius` at sideslip `beta_deg`
/// (negative for a left turn) with the front drive force pinned to `fxf`.
#[pyfunction]
#[pyo3(signature = (config, radius, beta_deg, fxf = 0.0))]
fn solve_equilibrium<'py>(
    py: Python<'py>,
    config: &PyConfig,
    radius: f64,
    beta_deg: f64,
    fxf: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = EquilibriumSpec {
        radius,
        beta_des: beta_deg.to_radians(),
        constraint: EquilibriumConstraint::FxfFixed(fxf),
    };
    let eq = equilibrium::solve_equilibrium(&spec, &config.inner.vehicle, &config.inner.tire.nominal).map_err(to_py)?;
    to_dict(py, &eq)
}

/// Reference trajectory as a dict with `samples`, `bounds` and `equilibria`.
#[pyfunction]
fn build_reference<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let reference = config.inner.build_reference().map_err(to_py)?;
    to_dict(py, &reference)
}

/// Trained front tire network.
#[pyclass(name = "Mlp", frozen)]
struct PyMlp {
    inner: mlp::Mlp,
}

#[pymethods]
impl PyMlp {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        mlp::load_weights(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mlp::save_weights(&self.inner, &path).map_err(to_py)
    }

    /// Predicted front lateral force for `[r, v, beta, delta, fxf, fzf]`.
    fn forward(&self, features: [f64; N_FEATURES]) -> PyResult<f64> {
        self.inner.forward(&features).map_err(to_py)
    }

    fn forward_batch(&self, rows: Vec<[f64; N_FEATURES]>) -> PyResult<Vec<f64>> {
        rows.iter().map(|x| self.inner.forward(x).map_err(to_py)).collect()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.config.layer_sizes.clone()
    }
}

/// Closed-loop run of one variant without touching the filesystem; returns
/// the region metrics for that run.
#[pyfunction]
#[pyo3(signature = (config, variant, network = None))]
fn run_variant<'py>(
    py: Python<'py>,
    config: &PyConfig,
    variant: &str,
    network: Option<&PyMlp>,
) -> PyResult<Bound<'py, PyAny>> {
    let v = parse_variant(variant)?;
    let cfg = &config.inner;
    let log = py
        .detach(|| {
            let reference = cfg.build_reference()?;
            harness::run_variant(cfg, &reference, v, network.map(|n| &n.inner))
        })
        .map_err(to_py)?;
    let report = MetricsReport::new(&[(v, &log)]);
    to_dict(py, &report.variants[0])
}

/// Built-in scenario scripts, usable as `datagen.scenarios` entries.
#[pyfunction]
fn default_scenarios(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_dict(py, &drift_forge::datagen::default_scenarios())
}

#[pyfunction]
fn percent_difference(a: f64, b: f64) -> Option<f64> {
    harness::percent_difference(a, b)
}

fn seed_of(config: &PyConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(config.inner.seed)
}

fn out_of(config: &PyConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&config.inner.out))
}

/// Simulate the scenario mix and write the labeled dataset; returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn gen_data<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let (seed, out) = (seed_of(config, seed), out_of(config, out));
    let m = py.detach(|| harness::cmd_gen_data(&config.inner, seed, &out)).map_err(to_py)?;
    to_dict(py, &m)
}

#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn train<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let (seed, out) = (seed_of(config, seed), out_of(config, out));
    let m = py.detach(|| harness::cmd_train(&config.inner, seed, &out)).map_err(to_py)?;
    to_dict(py, &m)
}

#[pyfunction]
#[pyo3(signature = (config, variant, seed = None, out = None))]
fn run<'py>(
    py: Python<'py>,
    config: &PyConfig,
    variant: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let v = parse_variant(variant)?;
    let (seed, out) = (seed_of(config, seed), out_of(config, out));
    let m = py.detach(|| harness::cmd_run(&config.inner, seed, v, &out)).map_err(to_py)?;
    to_dict(py, &m)
}

/// Region metrics over both run logs; returns the metrics report.
#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn metrics<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let (seed, out) = (seed_of(config, seed), out_of(config, out));
    let (_, report) = py.detach(|| harness::cmd_metrics(&config.inner, seed, &out)).map_err(to_py)?;
    to_dict(py, &report)
}

#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn export<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let (seed, out) = (seed_of(config, seed), out_of(config, out));
    let m = py.detach(|| harness::cmd_export(&config.inner, seed, &out)).map_err(to_py)?;
    to_dict(py, &m)
}

#[pymodule]
pub fn drift_forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(fiala_force, m)?)?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(build_reference, m)?)?;
    m.add_function(wrap_pyfunction!(run_variant, m)?)?;
    m.add_function(wrap_pyfunction!(default_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(percent_difference, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(export, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
