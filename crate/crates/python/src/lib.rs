//! Python bindings. Trees cross the boundary as `Tree` objects; reports and
//! configurations as JSON strings or plain dicts.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use strattree::sim::{DgpSpec, StudyConfig};
use strattree::{CovariateSpace, EstimateResult, FitConfig, Sample, StratificationTree};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Builds a sample, checking it against `space` (unit cube when `None`).
pub fn build_sample(
    y: Vec<f64>,
    a: Vec<usize>,
    x: Vec<Vec<f64>>,
    space_json: Option<&str>,
) -> Result<(Sample, Arc<CovariateSpace>), String> {
    let sample = Sample::new(y, a, x).map_err(|e| e.to_string())?;
    let space = match space_json {
        Some(s) => serde_json::from_str(s).map_err(|e| format!("space: {e}"))?,
        None => CovariateSpace::unit_cube(sample.d()),
    };
    sample.check_space(&space).map_err(|e| e.to_string())?;
    Ok((sample, Arc::new(space)))
}

/// A fit configuration from optional JSON plus keyword overrides.
pub fn build_config(
    config_json: Option<&str>,
    depth: Option<usize>,
    seed: Option<u64>,
    population: Option<usize>,
) -> Result<FitConfig, String> {
    let mut config: FitConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(|e| format!("config: {e}"))?,
        None => FitConfig::default(),
    };
    if let Some(d) = depth {
        config.max_depth = d;
    }
    if let Some(s) = seed {
        config.ea.seed = s;
    }
    if let Some(p) = population {
        config.ea.population = p;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

#[pyclass(name = "Tree", module = "strattree", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTree {
    inner: StratificationTree,
}

#[pymethods]
impl PyTree {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        StratificationTree::from_json(s)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn n_leaves(&self) -> usize {
        self.inner.n_leaves()
    }

    /// Assignment targets of each stratum, in label order.
    fn leaf_pis(&self) -> Vec<Vec<f64>> {
        self.inner
            .leaf_pis()
            .into_iter()
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// 1-based stratum label of `x`.
    fn stratum_of(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.stratum_of(&x).map_err(value_error)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Tree(depth={}, n_leaves={})",
            self.inner.depth(),
            self.inner.n_leaves()
        )
    }
}

/// `(y, a, x)` as passed from Python.
type Columns = (Vec<f64>, Vec<usize>, Vec<Vec<f64>>);

fn estimate_dict<'py>(py: Python<'py>, r: &EstimateResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("theta", r.theta)?;
    d.set_item("se", r.se)?;
    d.set_item("ci", (r.ci[0], r.ci[1]))?;
    d.set_item("level", r.level)?;
    d.set_item("v_hat", r.v_hat)?;
    d.set_item("v_h", r.v_h)?;
    d.set_item("v_y", r.v_y)?;
    d.set_item("n", r.n)?;
    Ok(d)
}

/// Fits a tree to pilot data. Returns `(tree, objective)`.
#[pyfunction]
#[pyo3(signature = (y, a, x, depth=None, seed=None, population=None, config=None, space=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    y: Vec<f64>,
    a: Vec<usize>,
    x: Vec<Vec<f64>>,
    depth: Option<usize>,
    seed: Option<u64>,
    population: Option<usize>,
    config: Option<&str>,
    space: Option<&str>,
) -> PyResult<(PyTree, f64)> {
    let (pilot, space) = build_sample(y, a, x, space).map_err(value_error)?;
    let config = build_config(config, depth, seed, population).map_err(value_error)?;
    let report = py
        .detach(|| {
            if pilot.arms() == 2 {
                strattree::fit(&pilot, &space, &config)
            } else {
                strattree::fit_with(&pilot, &space, &config, &strattree::EOptimalObjective)
            }
        })
        .map_err(value_error)?;
    Ok((PyTree { inner: report.tree }, report.objective))
}

/// Selects the depth by cross-validation and refits. Returns
/// `(tree, chosen_depth, criterion)`.
#[pyfunction]
#[pyo3(signature = (y, a, x, max_depth, seed=None, population=None, config=None, space=None))]
#[allow(clippy::too_many_arguments)]
fn cv_fit(
    py: Python<'_>,
    y: Vec<f64>,
    a: Vec<usize>,
    x: Vec<Vec<f64>>,
    max_depth: usize,
    seed: Option<u64>,
    population: Option<usize>,
    config: Option<&str>,
    space: Option<&str>,
) -> PyResult<(PyTree, usize, Vec<f64>)> {
    let (pilot, space) = build_sample(y, a, x, space).map_err(value_error)?;
    let config = build_config(config, Some(max_depth), seed, population).map_err(value_error)?;
    let (report, cv) = py
        .detach(|| strattree::cv_fit(&pilot, &space, max_depth, &config))
        .map_err(value_error)?;
    Ok((
        PyTree { inner: report.tree },
        cv.chosen_depth,
        cv.criterion(),
    ))
}

/// Randomizes units with covariates `x` within the strata of `tree`.
/// Returns `(strata, treatments)`.
#[pyfunction]
#[pyo3(signature = (tree, x, seed=0, procedure="sbr"))]
fn assign(
    tree: &PyTree,
    x: Vec<Vec<f64>>,
    seed: u64,
    procedure: &str,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let plan = match procedure {
        "sbr" => strattree::assign_sbr(&tree.inner, &x, seed),
        "simple" => strattree::assign_simple(&tree.inner, &x, seed),
        other => return Err(value_error(format!("unknown procedure {other:?}"))),
    }
    .map_err(value_error)?;
    Ok((plan.strata, plan.treatments))
}

/// Stratified difference in means with its variance estimate. With `pilot`
/// given as `(y, a, x)`, the pilot difference in means is pooled in.
#[pyfunction]
#[pyo3(signature = (tree, y, a, x, level=0.95, pilot=None))]
fn estimate<'py>(
    py: Python<'py>,
    tree: &PyTree,
    y: Vec<f64>,
    a: Vec<usize>,
    x: Vec<Vec<f64>>,
    level: f64,
    pilot: Option<Columns>,
) -> PyResult<Bound<'py, PyDict>> {
    let wave2 = Sample::new(y, a, x).map_err(value_error)?;
    if wave2.arms() > 2 {
        let r = strattree::estimate_ate_multi(&tree.inner, &wave2, level).map_err(value_error)?;
        let d = PyDict::new(py);
        d.set_item("theta", r.theta)?;
        d.set_item("se", r.se)?;
        d.set_item("ci", r.ci)?;
        d.set_item("level", r.level)?;
        d.set_item("n", r.n)?;
        return Ok(d);
    }
    let second = strattree::estimate_ate(&tree.inner, &wave2, level).map_err(value_error)?;
    match pilot {
        Some((py_y, py_a, py_x)) => {
            let first_wave = Sample::new(py_y, py_a, py_x).map_err(value_error)?;
            let flat = StratificationTree::single_leaf(tree.inner.space().clone(), 0, vec![0.5]);
            let first = strattree::estimate_ate(&flat, &first_wave, level).map_err(value_error)?;
            estimate_dict(py, &strattree::estimate_pooled(&first, &second))
        }
        None => estimate_dict(py, &second),
    }
}

/// Runs a Monte Carlo study on a built-in model and returns the report as
/// JSON.
#[pyfunction]
#[pyo3(signature = (model, config=None))]
fn simulate(py: Python<'_>, model: u8, config: Option<&str>) -> PyResult<String> {
    let dgp = DgpSpec::preset(model).map_err(value_error)?;
    let config: StudyConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(value_error)?,
        None => StudyConfig::default(),
    };
    let report = py
        .detach(|| strattree::sim::run_study(&dgp, &config))
        .map_err(value_error)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Default fit configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string(&FitConfig::default()).expect("config serializes")
}

/// Default study configuration as JSON.
#[pyfunction]
fn default_study_config() -> String {
    serde_json::to_string(&StudyConfig::default()).expect("config serializes")
}

#[pymodule(name = "strattree")]
fn strattree_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", strattree::VERSION)?;
    m.add_class::<PyTree>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(cv_fit, m)?)?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(default_study_config, m)?)?;
    Ok(())
}
