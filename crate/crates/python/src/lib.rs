//! Python bindings for the `chstab` solvers.

use std::path::PathBuf;

use chstab::cli::{self, EpsMode, ExperimentConfig, ReferenceChoice, RunSummary};
use chstab::diag;
use chstab::driver::Scheme;
use chstab::krylov::phi_apply_dense;
use chstab::{lim, problem, Error, GridSpec};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_solver_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

#[pyclass(name = "GridSpec", frozen, skip_from_py_object)]
struct PyGridSpec {
    inner: GridSpec,
}

#[pymethods]
impl PyGridSpec {
    #[new]
    #[pyo3(signature = (nx, ny, lx = None, ly = None))]
    fn new(nx: usize, ny: usize, lx: Option<f64>, ly: Option<f64>) -> PyResult<Self> {
        let inner = GridSpec::new(nx, ny, lx.unwrap_or(nx as f64), ly.unwrap_or(ny as f64)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny
    }

    #[getter]
    fn hx(&self) -> f64 {
        self.inner.hx()
    }

    #[getter]
    fn hy(&self) -> f64 {
        self.inner.hy()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn index(&self, i: usize, j: usize) -> usize {
        self.inner.index(i, j)
    }

    fn __repr__(&self) -> String {
        format!("GridSpec(nx={}, ny={}, hx={}, hy={})", self.inner.nx, self.inner.ny, self.inner.hx(), self.inner.hy())
    }
}

#[pyclass(name = "RunSummary", frozen, get_all)]
struct PyRunSummary {
    scheme: String,
    adaptive: bool,
    eyre: bool,
    steps: usize,
    final_t: f64,
    scheme_matvecs: u64,
    pc_matvecs: u64,
    total_matvecs: u64,
    max_mass_dev: f64,
    final_energy: Option<f64>,
    error: Option<f64>,
    times: Vec<f64>,
    taus: Vec<f64>,
    energy: Vec<f64>,
    y_final: Vec<f64>,
}

impl PyRunSummary {
    fn new(s: RunSummary, out: chstab::driver::RunOutput) -> Self {
        let series = diag::DiagnosticSeries::from_records(&out.records);
        Self {
            scheme: s.scheme.to_string(),
            adaptive: s.adaptive,
            eyre: s.eyre,
            steps: s.steps,
            final_t: s.final_t,
            scheme_matvecs: s.scheme_matvecs,
            pc_matvecs: s.pc_matvecs,
            total_matvecs: s.total_matvecs,
            max_mass_dev: s.max_mass_dev,
            final_energy: s.final_energy,
            error: s.error,
            times: series.times,
            taus: series.tau_history,
            energy: series.energy,
            y_final: out.y_final.as_slice().to_vec(),
        }
    }
}

#[pymethods]
impl PyRunSummary {
    fn __repr__(&self) -> String {
        let error = self.error.map_or("None".to_string(), |e| format!("{e:e}"));
        let adaptive = if self.adaptive { "True" } else { "False" };
        format!(
            "RunSummary(scheme='{}', adaptive={adaptive}, steps={}, total_matvecs={}, error={error})",
            self.scheme, self.steps, self.total_matvecs
        )
    }
}

#[pyfunction]
fn epsilon_m(h: f64, m: u32) -> PyResult<f64> {
    problem::epsilon_m(h, m).map_err(to_py)
}

#[pyfunction]
fn free_energy(c: f64) -> f64 {
    problem::free_energy(c)
}

#[pyfunction]
fn chebyshev_order(tau: f64, lambda_max: f64) -> usize {
    lim::chebyshev_order(tau, lambda_max)
}

#[pyfunction]
fn initial_condition(grid: &PyGridSpec, seed: u64) -> Vec<f64> {
    cli::initial_condition(&grid.inner, seed).as_slice().to_vec()
}

#[pyfunction]
fn discrete_energy(grid: &PyGridSpec, epsilon: f64, y: Vec<f64>) -> PyResult<f64> {
    if y.len() != grid.inner.len() {
        return Err(PyValueError::new_err(format!("expected {} values, got {}", grid.inner.len(), y.len())));
    }
    Ok(diag::discrete_energy(&grid.inner, epsilon, &DVector::from_vec(y)))
}

#[pyfunction]
fn mass(y: Vec<f64>) -> f64 {
    diag::mass(&DVector::from_vec(y))
}

/// `phi(M) b` for a square matrix given as a list of rows.
#[pyfunction]
fn phi_apply(m: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = m.len();
    if m.iter().any(|row| row.len() != n) || b.len() != n {
        return Err(PyValueError::new_err("matrix must be square and match the vector length"));
    }
    let m = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    Ok(phi_apply_dense(&m, &DVector::from_vec(b)).as_slice().to_vec())
}

fn parse_scheme(s: &str) -> PyResult<Scheme> {
    match s {
        "lim" => Ok(Scheme::Lim),
        "ee2" => Ok(Scheme::Ee2),
        other => Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    }
}

fn parse_reference(s: &str) -> PyResult<ReferenceChoice> {
    match s {
        "none" => Ok(ReferenceChoice::None),
        "classical" => Ok(ReferenceChoice::Classical),
        "ee2" => Ok(ReferenceChoice::Ee2),
        other => Err(PyValueError::new_err(format!("unknown reference {other:?}"))),
    }
}

/// Run one experiment; writes CSV output only when `out` is given.
#[pyfunction]
#[pyo3(signature = (
    nx = 64, ny = 64, lx = 64.0, ly = 64.0, t_final = 1000.0, scheme = "ee2", adaptive = false,
    eyre = false, tol = 1e-3, tau0 = 0.1, m_max = 30, seed = 0, eps = None, reference = "none", out = None
))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    t_final: f64,
    scheme: &str,
    adaptive: bool,
    eyre: bool,
    tol: f64,
    tau0: f64,
    m_max: usize,
    seed: u64,
    eps: Option<f64>,
    reference: &str,
    out: Option<PathBuf>,
) -> PyResult<PyRunSummary> {
    let mut config = ExperimentConfig {
        nx,
        ny,
        lx,
        ly,
        t_final,
        scheme: parse_scheme(scheme)?,
        adaptive,
        eyre,
        tol,
        tau0,
        m_max,
        seed,
        reference: parse_reference(reference)?,
        ..ExperimentConfig::default()
    };
    if let Some(value) = eps {
        config.eps = EpsMode::Explicit { value };
    }
    let e = py
        .detach(|| cli::run_experiment(&config, None, out.as_deref()))
        .map_err(to_py)?;
    Ok(PyRunSummary::new(e.summary, e.output))
}

#[pymodule]
fn chstab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyRunSummary>()?;
    m.add_function(wrap_pyfunction!(epsilon_m, m)?)?;
    m.add_function(wrap_pyfunction!(free_energy, m)?)?;
    m.add_function(wrap_pyfunction!(chebyshev_order, m)?)?;
    m.add_function(wrap_pyfunction!(initial_condition, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_energy, m)?)?;
    m.add_function(wrap_pyfunction!(mass, m)?)?;
    m.add_function(wrap_pyfunction!(phi_apply, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
