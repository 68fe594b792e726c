//! Python bindings: problem catalog, single runs, energy series and
//! convergence studies. Arrays cross the boundary as plain lists.

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use linsav::harness::{self, Cell, ErrorMode, Method, SimOptions, METHOD_TAGS};
use linsav::problems::{self, ProblemInstance, ProblemParams, PROBLEM_TAGS};
use linsav::sav_osde::Predictor;
use linsav::Error;

create_exception!(linsav_py, NumericalError, PyArithmeticError, "A step or reference solve failed numerically.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidShift { .. }
        | Error::ModulusOutOfRange(_)
        | Error::Dimension(_)
        | Error::NotSymmetric { .. }
        | Error::QuadratureOrder(_) => PyValueError::new_err(e.to_string()),
        other => NumericalError::new_err(other.to_string()),
    }
}

#[allow(clippy::too_many_arguments)]
fn instance(
    problem: &str,
    eps: Option<f64>,
    omega: Option<f64>,
    k: f64,
    n: Option<usize>,
    c0: Option<f64>,
) -> PyResult<ProblemInstance> {
    let d = ProblemParams::default();
    let params = ProblemParams {
        eps: eps.unwrap_or(d.eps),
        omega: omega.unwrap_or(d.omega),
        k,
        n: n.unwrap_or(d.n),
        shift: c0,
    };
    problems::build(problem, &params).map_err(to_py)
}

fn options(predictor: Option<&str>, fuse: bool) -> PyResult<SimOptions> {
    let predictor = predictor.map(|p| p.parse::<Predictor>()).transpose().map_err(to_py)?;
    Ok(SimOptions { predictor, fuse, ..SimOptions::default() })
}

fn method(tag: &str) -> PyResult<Method> {
    tag.parse().map_err(to_py)
}

/// Problem tags understood by the other functions.
#[pyfunction]
fn list_problems() -> Vec<&'static str> {
    PROBLEM_TAGS.to_vec()
}

#[pyfunction]
fn list_methods() -> Vec<&'static str> {
    METHOD_TAGS.to_vec()
}

/// Integrates one problem to `t_end` and returns a dict with the final
/// split state, the step count, the largest relative energy error and the
/// fixed-point convergence flag. `global_error` is filled when `error=True`.
#[pyfunction]
#[pyo3(signature = (problem, method_tag, h, t_end, *, eps=None, omega=None, k=0.07, n=None, c0=None, predictor=None, fuse=false, error=false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    problem: &str,
    method_tag: &str,
    h: f64,
    t_end: f64,
    eps: Option<f64>,
    omega: Option<f64>,
    k: f64,
    n: Option<usize>,
    c0: Option<f64>,
    predictor: Option<&str>,
    fuse: bool,
    error: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cell = Cell { instance: instance(problem, eps, omega, k, n, c0)?, method: method(method_tag)?, h, t_end };
    let opts = options(predictor, fuse)?;
    let (row, sim) = py
        .detach(|| harness::run_cell(&cell, &opts, error.then_some(ErrorMode::Final)))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("steps", sim.steps)?;
    out.set_item("position", sim.final_state.0)?;
    out.set_item("velocity", sim.final_state.1)?;
    out.set_item("max_energy_error", sim.max_energy_error)?;
    out.set_item("converged", sim.converged)?;
    out.set_item("global_error", row.global_error)?;
    Ok(out)
}

/// `(t, relative energy error)` pairs, thinned to at most 1e5 points.
#[pyfunction]
#[pyo3(signature = (problem, method_tag, h, t_end, *, eps=None, omega=None, k=0.07, n=None, c0=None, predictor=None))]
#[allow(clippy::too_many_arguments)]
fn energy_series(
    py: Python<'_>,
    problem: &str,
    method_tag: &str,
    h: f64,
    t_end: f64,
    eps: Option<f64>,
    omega: Option<f64>,
    k: f64,
    n: Option<usize>,
    c0: Option<f64>,
    predictor: Option<&str>,
) -> PyResult<Vec<(f64, f64)>> {
    let inst = instance(problem, eps, omega, k, n, c0)?;
    let m = method(method_tag)?;
    let mut opts = options(predictor, false)?;
    opts.record_series = true;
    let sim = py.detach(|| harness::simulate(&inst, m, h, t_end, &opts)).map_err(to_py)?;
    Ok(sim.energy_series)
}

/// Global errors over `h = 2^-k` and the fitted slope per method.
///
/// Returns `(rows, slopes)` where each row is `(method, h, error)` and
/// `slopes` maps a method tag to its slope (or `None`).
#[pyfunction]
#[pyo3(signature = (problem, methods, kmin, kmax, t_end=1.0, *, eps=None, omega=None, k=0.07, n=None, c0=None))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn convergence<'py>(
    py: Python<'py>,
    problem: &str,
    methods: Vec<String>,
    kmin: u32,
    kmax: u32,
    t_end: f64,
    eps: Option<f64>,
    omega: Option<f64>,
    k: f64,
    n: Option<usize>,
    c0: Option<f64>,
) -> PyResult<(Vec<(String, f64, Option<f64>)>, Bound<'py, PyDict>)> {
    let inst = instance(problem, eps, omega, k, n, c0)?;
    let ms = methods.iter().map(|m| method(m)).collect::<PyResult<Vec<_>>>()?;
    let study = py
        .detach(|| harness::convergence_study(&[inst], &ms, kmin, kmax, t_end, &SimOptions::default(), ErrorMode::Final))
        .map_err(to_py)?;
    let rows = study.rows.into_iter().map(|r| (r.method, r.h, r.global_error)).collect();
    let slopes = PyDict::new(py);
    for fit in study.fits {
        slopes.set_item(fit.method, fit.slope)?;
    }
    Ok((rows, slopes))
}

/// Jacobi `sn(u; modulus)`.
#[pyfunction]
fn jacobi_sn(u: f64, modulus: f64) -> PyResult<f64> {
    problems::jacobi_sn(u, modulus).map_err(to_py)
}

#[pymodule]
fn linsav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(list_methods, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(energy_series, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(jacobi_sn, m)?)?;
    Ok(())
}
