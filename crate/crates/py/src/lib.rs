use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pamlab::environments::{sample_centered, sample_env as sample_raw, EnvModelSpec, EnvTrace};
use pamlab::harness::{run_with_threads, ExperimentConfig, ExperimentKind};
use pamlab::solver::{InitialCondition, SolutionTrace, SolverConfig};
use pamlab::FieldSnapshot;

fn err(e: pamlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// `"delta0"`, `"ones"` or a list of per-site values.
fn initial_condition(u0: &Bound<'_, PyAny>) -> PyResult<InitialCondition> {
    if let Ok(name) = u0.extract::<String>() {
        return match name.as_str() {
            "delta0" => Ok(InitialCondition::Delta0),
            "ones" => Ok(InitialCondition::Ones),
            other => Err(PyValueError::new_err(format!("unknown initial condition {other:?}"))),
        };
    }
    Ok(InitialCondition::Custom(u0.extract::<Vec<f64>>()?))
}

#[pyclass(name = "Lattice", module = "pamlab_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLattice {
    inner: pamlab::Lattice,
}

#[pymethods]
impl PyLattice {
    #[new]
    fn new(dim: usize, side: usize) -> PyResult<Self> {
        pamlab::Lattice::new(dim, side).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.n_sites()
    }

    fn neighbors(&self, site: usize) -> PyResult<Vec<usize>> {
        self.check(site)?;
        Ok(self.inner.neighbors(site).to_vec())
    }

    fn coords(&self, site: usize) -> PyResult<Vec<usize>> {
        self.check(site)?;
        Ok(self.inner.coords(site))
    }

    fn site(&self, coords: Vec<usize>) -> PyResult<usize> {
        self.inner.site(&coords).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Lattice(dim={}, side={})", self.inner.dim(), self.inner.side())
    }
}

impl PyLattice {
    fn check(&self, site: usize) -> PyResult<()> {
        if site >= self.inner.n_sites() {
            return Err(PyValueError::new_err(format!("site {site} out of range")));
        }
        Ok(())
    }
}

/// Environment model; build with `EnvSpec.from_json` or the shortcuts.
#[pyclass(name = "EnvSpec", module = "pamlab_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEnvSpec {
    inner: EnvModelSpec,
}

#[pymethods]
impl PyEnvSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: EnvModelSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn two_state() -> Self {
        Self { inner: EnvModelSpec::two_state() }
    }

    #[staticmethod]
    fn constant(value: f64) -> Self {
        Self { inner: EnvModelSpec::constant(value) }
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).unwrap_or_default()
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.name()
    }

    fn __repr__(&self) -> String {
        format!("EnvSpec({})", self.to_json())
    }
}

#[pyclass(name = "EnvTrace", module = "pamlab_py", frozen)]
struct PyEnvTrace {
    inner: EnvTrace,
}

#[pymethods]
impl PyEnvTrace {
    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn lattice(&self) -> PyLattice {
        PyLattice { inner: self.inner.lattice().clone() }
    }

    #[getter]
    fn n_events(&self) -> usize {
        self.inner.events().len()
    }

    /// `(time, site, new_value)` triples in time order.
    fn events(&self) -> Vec<(f64, usize, f64)> {
        self.inner.events().iter().map(|e| (e.time, e.site, e.value)).collect()
    }

    fn query(&self, site: usize, t: f64) -> PyResult<f64> {
        self.inner.query(site, t).map_err(err)
    }

    fn occupation_integral(&self, site: usize, t0: f64, t1: f64) -> PyResult<f64> {
        self.inner.occupation_integral(site, t0, t1).map_err(err)
    }

    fn snapshot(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner.snapshot(t).map(FieldSnapshot::into_values).map_err(err)
    }

    /// Running supremum `max_{s <= t} ξ(x, s)` per site.
    fn sup_field(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner.sup_field(t).map(FieldSnapshot::into_values).map_err(err)
    }
}

#[pyclass(name = "Solution", module = "pamlab_py", frozen)]
struct PySolution {
    inner: SolutionTrace,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn sample_times(&self) -> Vec<f64> {
        self.inner.sample_times.clone()
    }

    #[getter]
    fn log_u_origin(&self) -> Vec<f64> {
        self.inner.log_u_origin.clone()
    }

    fn log_u(&self, site: usize, i: usize) -> PyResult<f64> {
        if site >= self.inner.lattice.n_sites() || i >= self.inner.sample_times.len() {
            return Err(PyValueError::new_err("site or time index out of range"));
        }
        Ok(self.inner.log_u(site, i))
    }

    /// `log u(·, t_i)` over all sites.
    fn log_field(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.sample_times.len() {
            return Err(PyValueError::new_err("time index out of range"));
        }
        Ok((0..self.inner.lattice.n_sites()).map(|x| self.inner.log_u(x, i)).collect())
    }
}

#[pyfunction]
#[pyo3(signature = (spec, lattice, horizon, seed, centered = true))]
fn sample_env(spec: &PyEnvSpec, lattice: &PyLattice, horizon: f64, seed: u64, centered: bool) -> PyResult<PyEnvTrace> {
    let inner = if centered {
        sample_centered(&spec.inner, &lattice.inner, horizon, seed)
    } else {
        sample_raw(&spec.inner, &lattice.inner, horizon, seed)
    };
    inner.map(|inner| PyEnvTrace { inner }).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (trace, kappa, u0, t_grid, max_dt = None))]
fn solve_pam(
    py: Python<'_>,
    trace: &PyEnvTrace,
    kappa: f64,
    u0: &Bound<'_, PyAny>,
    t_grid: Vec<f64>,
    max_dt: Option<f64>,
) -> PyResult<PySolution> {
    let u0 = initial_condition(u0)?;
    let mut config = SolverConfig::default();
    if let Some(dt) = max_dt {
        config.max_dt = dt;
    }
    py.detach(|| pamlab::solver::solve_pam(&trace.inner, kappa, &u0, &t_grid, &config))
        .map(|inner| PySolution { inner })
        .map_err(err)
}

/// Monte Carlo estimate of `log u(site, t)`: `(estimate, std_error, n_nonzero)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn fk_estimate(
    py: Python<'_>,
    trace: &PyEnvTrace,
    kappa: f64,
    u0: &Bound<'_, PyAny>,
    site: usize,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<(f64, f64, usize)> {
    let u0 = initial_condition(u0)?;
    let e = py
        .detach(|| pamlab::feynman_kac::fk_estimate(&trace.inner, kappa, &u0, site, t, n_samples, seed))
        .map_err(err)?;
    Ok((e.mean, e.std_error, e.n_nonzero))
}

/// Quenched exponent per time: list of `(t, estimate, ci_half_width)`.
#[pyfunction]
#[pyo3(signature = (spec, lattice, kappa, t_grid, n_replicas, u0, seed))]
fn quenched_estimate(
    py: Python<'_>,
    spec: &PyEnvSpec,
    lattice: &PyLattice,
    kappa: f64,
    t_grid: Vec<f64>,
    n_replicas: usize,
    u0: &Bound<'_, PyAny>,
    seed: u64,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let u0 = initial_condition(u0)?;
    let rows = py
        .detach(|| {
            pamlab::lyapunov::quenched_estimate(
                &spec.inner,
                &lattice.inner,
                kappa,
                &t_grid,
                n_replicas,
                &u0,
                &SolverConfig::default(),
                seed,
            )
        })
        .map_err(err)?;
    Ok(rows.into_iter().map(|p| (p.t, p.estimate, p.ci_half_width)).collect())
}

fn report_dict<'py>(py: Python<'py>, r: &pamlab::percolation::ComponentReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alpha", r.alpha)?;
    d.set_item("sizes", r.sizes.clone())?;
    d.set_item("largest_fraction", r.largest_fraction)?;
    d.set_item("n_components", r.n_components())?;
    d.set_item("spanning", r.spanning)?;
    Ok(d)
}

/// Clusters of `{x : values[x] <= alpha}` on the torus.
#[pyfunction]
fn level_set_components<'py>(py: Python<'py>, lattice: &PyLattice, values: Vec<f64>, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    let snap = FieldSnapshot::new(lattice.inner.clone(), values).map_err(err)?;
    report_dict(py, &pamlab::percolation::level_set_components(&snap, alpha))
}

/// Profile over `alpha_grid` of the level sets of the running supremum at `t`.
#[pyfunction]
fn percolation_profile<'py>(py: Python<'py>, trace: &PyEnvTrace, t: f64, alpha_grid: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let p = pamlab::percolation::percolation_profile(&trace.inner, t, &alpha_grid).map_err(err)?;
    let d = PyDict::new(py);
    let reports = p.reports.iter().map(|r| report_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    d.set_item("reports", reports)?;
    d.set_item("threshold", p.threshold)?;
    d.set_item("threshold_density", p.threshold_density)?;
    Ok(d)
}

/// Run one harness experiment from TOML text; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (kind, config_toml, out, threads = None))]
fn run_experiment(py: Python<'_>, kind: &str, config_toml: &str, out: PathBuf, threads: Option<usize>) -> PyResult<String> {
    let kind: ExperimentKind =
        serde_json::from_value(serde_json::Value::String(kind.into())).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let cfg = ExperimentConfig::from_toml_as(config_toml, kind).map_err(err)?;
    let manifest = py.detach(|| run_with_threads(&cfg, &out, threads)).map_err(err)?;
    serde_json::to_string_pretty(&manifest).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn pamlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLattice>()?;
    m.add_class::<PyEnvSpec>()?;
    m.add_class::<PyEnvTrace>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(sample_env, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pam, m)?)?;
    m.add_function(wrap_pyfunction!(fk_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(quenched_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(level_set_components, m)?)?;
    m.add_function(wrap_pyfunction!(percolation_profile, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
