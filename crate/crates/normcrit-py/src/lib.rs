//! Python module `normcrit_py`.

use normcrit::functionals::Params;
use normcrit::solvers::{
    profile_constants as core_profile_constants, solve_local_min, solve_mountain_pass, solve_scalar_branch, Side,
    SolveResult, SolverOptions,
};
use normcrit::NormcritError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: NormcritError) -> PyErr {
    match e {
        NormcritError::NonConvergence { .. } | NormcritError::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `S^2 = 32 pi^2 / 3`.
#[pyfunction]
fn sobolev_sq() -> f64 {
    normcrit::profiles::SOBOLEV_SQ
}

/// `(|w_p|_2^2, C_p^p)` from the computed ground state profile.
#[pyfunction]
fn profile_constants(p: f64) -> PyResult<(f64, f64)> {
    core_profile_constants(p).map_err(to_py)
}

fn result_dict<'py>(py: Python<'py>, r: &SolveResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    let branch = serde_json::to_value(r.branch).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    d.set_item("branch", branch.as_str())?;
    d.set_item("masses", r.masses)?;
    d.set_item("energy", r.energy)?;
    d.set_item("lambda1", r.lambda1)?;
    d.set_item("lambda2", r.lambda2)?;
    d.set_item("converged", r.converged)?;
    d.set_item("pohozaev_relative", r.pohozaev_relative())?;
    d.set_item("residual_relative", r.residual_relative())?;
    d.set_item("identity_error", r.identity_error())?;
    d.set_item("mass_error", r.mass_error)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("r", r.pair.u.grid().nodes().to_vec())?;
    d.set_item("u", r.pair.u.values().to_vec())?;
    d.set_item("v", r.pair.v.values().to_vec())?;
    Ok(d)
}

/// Solves one branch: `"ground"`, `"mp"`, `"scalar_plus"` or `"scalar_minus"`.
/// Scalar branches use `mu1`, `alpha1` and `a1`.
#[pyfunction]
#[pyo3(signature = (kind, p, a1, a2, mu1=1.0, mu2=1.0, alpha1=1.0, alpha2=1.0, beta=2.0, tol=1e-8, seed=0))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    kind: &str,
    p: f64,
    a1: f64,
    a2: f64,
    mu1: f64,
    mu2: f64,
    alpha1: f64,
    alpha2: f64,
    beta: f64,
    tol: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let prm = Params { mu1, mu2, alpha1, alpha2, beta, p };
    let opts = SolverOptions { tol, seed, ..Default::default() };
    let res = py
        .allow_threads(|| match kind {
            "ground" => solve_local_min(&prm, a1, a2, &opts),
            "mp" => solve_mountain_pass(&prm, a1, a2, &opts),
            "scalar_plus" => solve_scalar_branch(p, mu1, alpha1, a1, Side::Plus, &opts),
            "scalar_minus" => solve_scalar_branch(p, mu1, alpha1, a1, Side::Minus, &opts),
            other => Err(NormcritError::Parameter(format!("unknown branch {other:?}"))),
        })
        .map_err(to_py)?;
    result_dict(py, &res)
}

#[pymodule]
fn normcrit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sobolev_sq, m)?)?;
    m.add_function(wrap_pyfunction!(profile_constants, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
