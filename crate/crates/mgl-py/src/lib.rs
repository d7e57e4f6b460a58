//! Python module `mglab`. Configs and reports cross the boundary as JSON
//! strings in the same formats the CLI reads and writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mgl::harness::{self, ExperimentConfig, Split, Suite};
use mgl::measures::{self, AdversarialSpec};
use mgl::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn config(text: &str, seed: Option<u64>) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(text).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.spec.seed = s;
    }
    Ok(cfg)
}

/// `P_{d,n}(t)`, normalized so that `P_{d,n}(1) = 1`.
#[pyfunction]
fn legendre(d: usize, n: usize, t: f64) -> PyResult<f64> {
    mgl::orthopoly::legendre_eval(d, n, t).map_err(py_err)
}

/// Analytic γ-margin error of the reference halfspace under a spec (JSON).
#[pyfunction]
fn certified_margin_bound(spec_json: &str) -> PyResult<f64> {
    let spec = AdversarialSpec::from_json(spec_json).map_err(py_err)?;
    measures::certified_margin_bound(&spec).map_err(py_err)
}

/// Points and labels of the train or test split of a config.
#[pyfunction]
#[pyo3(signature = (config_json, split = "train", n = None, seed = None))]
fn sample(config_json: &str, split: &str, n: Option<usize>, seed: Option<u64>) -> PyResult<(Vec<Vec<f64>>, Vec<i8>)> {
    let cfg = config(config_json, seed)?;
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(PyValueError::new_err(format!("split must be 'train' or 'test', got '{other}'"))),
    };
    let data = harness::sample_split(&cfg, cfg.spec.seed, split, n).map_err(py_err)?;
    Ok(data.into_iter().map(|p| (p.x.into_inner(), p.y)).unzip())
}

/// Gap experiment report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, seed = None))]
fn run_gap_experiment(py: Python<'_>, config_json: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = config(config_json, seed)?;
    py.detach(|| harness::run_gap_experiment(&cfg).and_then(|r| r.to_json())).map_err(py_err)
}

/// Sweep CSV for a JSON list of configs.
#[pyfunction]
#[pyo3(signature = (configs_json, threads = None))]
fn sweep(py: Python<'_>, configs_json: &str, threads: Option<usize>) -> PyResult<String> {
    let configs: Vec<ExperimentConfig> = serde_json::from_str(configs_json).map_err(|e| py_err(e.into()))?;
    py.detach(|| {
        let run = || harness::sweep(&configs).and_then(|rows| harness::sweep_csv(&rows));
        match threads {
            Some(n) => harness::with_threads(n, run).and_then(|r| r),
            None => run(),
        }
    })
    .map_err(py_err)
}

/// `(passed, report_json)` for one of orthopoly, kernels, geometry, band, solver, all.
#[pyfunction]
#[pyo3(signature = (suite = "all"))]
fn verify(py: Python<'_>, suite: &str) -> PyResult<(bool, String)> {
    let suite: Suite = suite.parse().map_err(py_err)?;
    let report = py.detach(|| harness::verify_lemmas(suite));
    Ok((report.passed, report.to_json().map_err(py_err)?))
}

#[pymodule]
fn mglab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(legendre, m)?)?;
    m.add_function(wrap_pyfunction!(certified_margin_bound, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(run_gap_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
