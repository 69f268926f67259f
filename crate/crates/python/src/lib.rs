//! Python bindings. Structured values (index sets, plans, estimates,
//! experiment configs and records) cross the boundary as JSON strings in the
//! same format the CLI writes.

use anisova_core::bandwidth::{optimize as optimize_plan, AllocationProblem, BandwidthPlan};
use anisova_core::least_squares::{fcv_score, fit as fit_lsqr, AnovaApproximation, FitConfig, SavedModel};
use anisova_core::pipeline::{cv_sweep_loop, init_plan, refine_loop, ExperimentConfig};
use anisova_core::smoothness::learn;
use anisova_core::test_functions::{sample as sample_fn, NoiseSpec, TestFunction};
use anisova_core::{AnovaTerm, Error, GroupedIndexSet, SamplingSet};
use num_complex::Complex64;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, Error::Io(_)) {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// An index set given either directly or as a plan from `optimize`.
fn index_set_from_json(s: &str) -> PyResult<GroupedIndexSet> {
    match serde_json::from_str::<BandwidthPlan>(s) {
        Ok(plan) => Ok(plan.index_set),
        Err(_) => from_json(s),
    }
}

/// A fitted ANOVA approximation.
#[pyclass(name = "Model", module = "anisova")]
struct PyModel {
    inner: AnovaApproximation,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let saved: SavedModel = from_json(s)?;
        Ok(PyModel {
            inner: AnovaApproximation::from_saved(saved).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.inner.to_saved())
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.index_set().d()
    }

    #[getter]
    fn cardinality(&self) -> usize {
        self.inner.index_set().len()
    }

    #[getter]
    fn lsqr_iterations(&self) -> usize {
        self.inner.fit_diagnostics().iterations
    }

    /// Frequencies in storage order.
    fn frequencies(&self) -> Vec<Vec<i64>> {
        self.inner.index_set().frequencies().collect()
    }

    fn coefficients(&self) -> Vec<Complex64> {
        self.inner.coefficients().to_vec()
    }

    /// Values at flat row-major `points`.
    fn evaluate(&self, py: Python<'_>, points: Vec<f64>) -> PyResult<Vec<Complex64>> {
        py.detach(|| self.inner.evaluate(&points)).map_err(py_err)
    }

    fn fcv(&self, py: Python<'_>, points: Vec<f64>, values: Vec<Complex64>) -> PyResult<f64> {
        let samples = SamplingSet::new(self.d(), points, values).map_err(py_err)?;
        py.detach(|| fcv_score(&self.inner, &samples)).map_err(py_err)
    }

    fn total_energy(&self) -> f64 {
        self.inner.total_energy()
    }

    fn group_energy(&self, dims: Vec<usize>) -> PyResult<f64> {
        let term = AnovaTerm::new(dims).map_err(py_err)?;
        self.inner.group_energy(&term).map_err(py_err)
    }

    /// Learned decay constants and rates, as JSON.
    fn learn(&self) -> PyResult<String> {
        to_json(&learn(&self.inner))
    }

    /// Monte Carlo `L2` distance to a named test function.
    fn l2_error(&self, py: Python<'_>, function: &str, n_test: usize, seed: u64) -> PyResult<f64> {
        let f = TestFunction::by_name(function).map_err(py_err)?;
        py.detach(|| anisova_core::least_squares::l2_test_error(&self.inner, |x| f.eval(x), n_test, seed))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(d={}, cardinality={})", self.d(), self.cardinality())
    }
}

/// Samples a named test function: `(d, points, values)` with flat points.
#[pyfunction]
#[pyo3(signature = (function, n, seed, snr_db=None, noise_seed=None))]
fn sample(
    py: Python<'_>,
    function: &str,
    n: usize,
    seed: u64,
    snr_db: Option<f64>,
    noise_seed: Option<u64>,
) -> PyResult<(usize, Vec<f64>, Vec<Complex64>)> {
    let f = TestFunction::by_name(function).map_err(py_err)?;
    let noise = snr_db
        .map(|db| NoiseSpec::new(db, noise_seed.unwrap_or(seed + 1)))
        .transpose()
        .map_err(py_err)?;
    let s = py.detach(|| sample_fn(&f, n, seed, noise)).map_err(py_err)?;
    Ok((s.d(), s.points().to_vec(), s.values().to_vec()))
}

/// Least-squares fit on an index set or plan given as JSON.
#[pyfunction]
#[pyo3(signature = (d, points, values, index_set, max_iter=50, rel_tol=1e-8))]
fn fit(
    py: Python<'_>,
    d: usize,
    points: Vec<f64>,
    values: Vec<Complex64>,
    index_set: &str,
    max_iter: usize,
    rel_tol: f64,
) -> PyResult<PyModel> {
    let set = index_set_from_json(index_set)?;
    let samples = SamplingSet::new(d, points, values).map_err(py_err)?;
    let cfg = FitConfig {
        max_iter,
        rel_tol,
        ..FitConfig::default()
    };
    let inner = py.detach(|| fit_lsqr(&samples, &set, &cfg)).map_err(py_err)?;
    Ok(PyModel { inner })
}

/// Plan for a budget `m` with every dimension at `C = 1`, `s = 1`.
#[pyfunction]
#[pyo3(signature = (d, terms, m, min_bandwidth=4))]
fn initial_plan(d: usize, terms: Vec<Vec<usize>>, m: usize, min_bandwidth: usize) -> PyResult<String> {
    let terms = terms
        .into_iter()
        .map(AnovaTerm::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    to_json(&init_plan(d, &terms, m, min_bandwidth).map_err(py_err)?)
}

/// Allocates a budget for an allocation problem given as JSON.
#[pyfunction]
fn optimize(problem: &str) -> PyResult<String> {
    let p: AllocationProblem = from_json(problem)?;
    to_json(&optimize_plan(&p).map_err(py_err)?)
}

/// Refinement loop for an experiment config (JSON); returns the records.
#[pyfunction]
#[pyo3(signature = (config="{}"))]
fn refine(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = from_json(config)?;
    let recs = py.detach(|| refine_loop(&cfg)).map_err(py_err)?;
    to_json(&recs)
}

/// Cross-validation sweep for an experiment config (JSON); returns the rounds.
#[pyfunction]
#[pyo3(signature = (config="{}"))]
fn cv_sweep(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = from_json(config)?;
    let rounds = py.detach(|| cv_sweep_loop(&cfg)).map_err(py_err)?;
    to_json(&rounds)
}

#[pymodule]
fn anisova(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(initial_plan, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(cv_sweep, m)?)?;
    Ok(())
}
