//! Python bindings: solves, studies and verification suites, returned as
//! plain dicts and lists.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};
use torus_mfg::config::ProblemKind;
use torus_mfg::grid::SpaceTimeField;
use torus_mfg::lemmas::lemma_suite as core_lemma_suite;
use torus_mfg::solver::ergodic::solve_ergodic_report;
use torus_mfg::solver::evolutive::solve_evolutive_report;
use torus_mfg::solver::study::{convergence_study, ergodic_study};
use torus_mfg::verify::{adjoint_suite as core_adjoint_suite, identity_suite as core_identity_suite};
use torus_mfg::{MfgError, RunConfig};

fn to_py_err(e: MfgError) -> PyErr {
    match e {
        MfgError::NonConvergence { .. }
        | MfgError::OuterNonConvergence { .. }
        | MfgError::InversePowerStall { .. }
        | MfgError::LinearSolve(_)
        | MfgError::NegativeDensity { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_python(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn slices(f: &SpaceTimeField) -> Vec<&[f64]> {
    f.slices().iter().map(|s| s.values()).collect()
}

fn solve_config(cfg: &RunConfig) -> torus_mfg::Result<Value> {
    let solver = cfg.solver_config();
    Ok(match cfg.problem.kind {
        ProblemKind::Evolutive => {
            let p = cfg.evolutive()?;
            let sol = solve_evolutive_report(&p, &solver)?;
            json!({
                "kind": "evolutive",
                "n_side": p.grid().n_side(),
                "n_steps": p.mesh.n_steps(),
                "converged": sol.converged,
                "outer_iters": sol.outer_iters,
                "final_change": sol.final_change,
                "residual_history": sol.residual_history,
                "hjb_residual": sol.hjb_residual,
                "fp_residual": sol.fp_residual,
                "max_clamp": sol.max_clamp,
                "densities": sol.density_diagnostics(),
                "monitors": sol.monitors,
                "u": slices(&sol.u),
                "m": slices(&sol.m),
            })
        }
        ProblemKind::Ergodic => {
            let p = cfg.ergodic()?;
            let sol = solve_ergodic_report(&p, &solver)?;
            json!({
                "kind": "ergodic",
                "n_side": p.grid().n_side(),
                "converged": sol.converged,
                "lambda": sol.lambda,
                "outer_iters": sol.outer_iters,
                "final_change": sol.final_change,
                "residual_history": sol.residual_history,
                "hjb_residual": sol.hjb_residual,
                "fp_residual": sol.fp_residual,
                "mass_residual": sol.mass_residual,
                "u": sol.u.values(),
                "m": sol.m.values(),
            })
        }
    })
}

fn study_config(cfg: &RunConfig) -> torus_mfg::Result<Value> {
    let levels = cfg.study_levels()?;
    let solver = cfg.solver_config();
    Ok(match cfg.problem.kind {
        ProblemKind::Evolutive => json!(convergence_study(
            |g, nt| cfg.evolutive_problem(g.n_side(), nt),
            &levels,
            &solver
        )?),
        ProblemKind::Ergodic => {
            let sides: Vec<usize> = levels.iter().map(|l| l.n_side).collect();
            json!(ergodic_study(|g| cfg.ergodic_problem(g.n_side()), &sides, &solver)?)
        }
    })
}

fn run_with<F>(py: Python<'_>, f: F) -> PyResult<Py<PyAny>>
where
    F: FnOnce() -> torus_mfg::Result<Value> + Send,
{
    let value = py.detach(f).map_err(to_py_err)?;
    to_python(py, &value)
}

/// Solves the problem described by a TOML string. Fields are row-major
/// lists of length `n_side**2`; evolutive results hold one list per time level.
#[pyfunction]
fn solve(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_toml_str(config).map_err(to_py_err)?;
    run_with(py, || solve_config(&cfg))
}

/// Like `solve`, reading a TOML file (or a `meta.json` archive).
#[pyfunction]
fn solve_file(py: Python<'_>, path: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::load(Path::new(path)).map_err(to_py_err)?;
    run_with(py, || solve_config(&cfg))
}

/// Refinement study over the `[study] levels` of a TOML string.
#[pyfunction]
fn study(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_toml_str(config).map_err(to_py_err)?;
    run_with(py, || study_config(&cfg))
}

#[pyfunction]
#[pyo3(signature = (beta, samples = 1000, seed = 0))]
fn lemma_suite(py: Python<'_>, beta: f64, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
    run_with(py, || Ok(json!(core_lemma_suite(beta, samples, seed)?)))
}

#[pyfunction]
#[pyo3(signature = (beta, samples = 100, seed = 0))]
fn identity_suite(py: Python<'_>, beta: f64, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
    run_with(py, || Ok(json!(core_identity_suite(beta, samples, seed)?)))
}

#[pyfunction]
#[pyo3(signature = (beta, probes = 100, seed = 0))]
fn adjoint_suite(py: Python<'_>, beta: f64, probes: usize, seed: u64) -> PyResult<Py<PyAny>> {
    run_with(py, || Ok(json!(core_adjoint_suite(beta, probes, seed)?)))
}

#[pymodule]
fn torus_mfg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_file, m)?)?;
    m.add_function(wrap_pyfunction!(study, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_suite, m)?)?;
    m.add_function(wrap_pyfunction!(identity_suite, m)?)?;
    m.add_function(wrap_pyfunction!(adjoint_suite, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ERGODIC: &str = r#"
[problem]
kind = "ergodic"
nu = 0.6
beta = 2.0
n_side = 8
[cost]
kind = "local"
local = { preset = "linear" }
"#;

    #[test]
    fn ergodic_payload_has_flat_fields() {
        let cfg = RunConfig::from_toml_str(ERGODIC).unwrap();
        let v = solve_config(&cfg).unwrap();
        assert_eq!(v["kind"], "ergodic");
        assert_eq!(v["u"].as_array().unwrap().len(), 64);
        assert!((v["lambda"].as_f64().unwrap() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn study_needs_levels() {
        let cfg = RunConfig::from_toml_str(ERGODIC).unwrap();
        assert!(matches!(study_config(&cfg), Err(MfgError::Config { .. })));
    }
}
