//! Self-convergence studies: solve on nested levels and measure each coarse
//! level against the finest one by injection in space and time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ergodic::{solve_ergodic_report, ErgodicProblem};
use super::evolutive::{
    into_result, solve_evolutive_report, DensityDiagnostics, EvolutiveProblem, EvolutiveSolution,
};
use super::monitors::AprioriMonitors;
use super::SolverConfig;
use crate::error::{invalid, MfgError, Result};
use crate::grid::{restrict, stencil_power_sum, TorusGrid};

/// One refinement level `(N_h, N_T)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyLevel {
    pub n_side: usize,
    pub n_steps: usize,
}

impl From<(usize, usize)> for StudyLevel {
    fn from((n_side, n_steps): (usize, usize)) -> Self {
        Self { n_side, n_steps }
    }
}

/// Checks that each level refines the previous one by the same factor in
/// space and time.
pub fn check_levels(levels: &[StudyLevel]) -> Result<()> {
    if levels.len() < 2 {
        return Err(invalid("levels", "at least two levels are required"));
    }
    for w in levels.windows(2) {
        let (c, f) = (w[0], w[1]);
        if c.n_side == 0 || f.n_side <= c.n_side || !f.n_side.is_multiple_of(c.n_side) {
            return Err(MfgError::NonNestedGrids {
                fine: f.n_side,
                coarse: c.n_side,
            });
        }
        let r = f.n_side / c.n_side;
        if c.n_steps == 0 || f.n_steps != r * c.n_steps {
            return Err(invalid(
                "levels",
                format!(
                    "N_T must scale with N_h: ({}, {}) -> ({}, {})",
                    c.n_side, c.n_steps, f.n_side, f.n_steps
                ),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelErrors {
    pub n_side: usize,
    pub n_steps: usize,
    pub h: f64,
    pub dt: f64,
    pub err_u_sup: f64,
    pub err_u_w1beta: f64,
    pub err_m: f64,
    pub outer_iters: usize,
    pub densities: DensityDiagnostics,
    pub monitors: Option<AprioriMonitors>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedOrders {
    pub u_sup: f64,
    pub u_w1beta: f64,
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub beta: f64,
    /// Exponent of the discrete Lebesgue norm used for `m`.
    pub m_norm_exponent: f64,
    /// Errors of every level but the finest, coarse to fine.
    pub levels: Vec<LevelErrors>,
    pub finest: StudyLevel,
    pub finest_outer_iters: usize,
    pub finest_densities: DensityDiagnostics,
    pub finest_monitors: Option<AprioriMonitors>,
    /// Order between consecutive entries of `levels`.
    pub orders: Vec<ObservedOrders>,
    /// Errors at or below this are treated as exact.
    pub noise_floor: f64,
    pub strictly_decreasing: bool,
}

/// Space-time error norms of a coarse solution against a finer one.
pub fn level_errors(
    coarse: &EvolutiveSolution,
    fine: &EvolutiveSolution,
    beta: f64,
    m_exponent: f64,
) -> Result<(f64, f64, f64)> {
    let mesh = coarse.u.mesh();
    let grid = coarse.u.grid();
    let nt = mesh.n_steps();
    let fine_nt = fine.u.mesh().n_steps();
    if !fine_nt.is_multiple_of(nt) {
        return Err(MfgError::MeshMismatch(format!(
            "N_T = {fine_nt} is not a multiple of {nt}"
        )));
    }
    let rt = fine_nt / nt;
    let h = grid.h();
    let w = h * h * mesh.dt();
    let (mut sup, mut grad, mut mpow) = (0.0f64, 0.0, 0.0);
    for n in 0..=nt {
        let eu = coarse.u.slice(n).sub(&restrict(fine.u.slice(n * rt), grid)?);
        sup = sup.max(eu.sup_norm());
        if n >= 1 {
            grad += stencil_power_sum(&eu, beta);
        }
        if n < nt {
            let em = coarse.m.slice(n).sub(&restrict(fine.m.slice(n * rt), grid)?);
            mpow += em.values().iter().map(|v| v.abs().powf(m_exponent)).sum::<f64>();
        }
    }
    Ok((sup, (w * grad).powf(1.0 / beta), (w * mpow).powf(1.0 / m_exponent)))
}

fn decreasing(seq: impl Iterator<Item = f64> + Clone, floor: f64) -> bool {
    let v: Vec<f64> = seq.collect();
    v.windows(2).all(|p| p[1] < p[0] || (p[0] <= floor && p[1] <= floor))
}

/// Solves `family(grid, n_steps)` on every level and compares against the finest.
pub fn convergence_study<F>(family: F, levels: &[StudyLevel], cfg: &SolverConfig) -> Result<StudyReport>
where
    F: Fn(TorusGrid, usize) -> Result<EvolutiveProblem> + Sync,
{
    check_levels(levels)?;
    let results: Vec<Result<(EvolutiveProblem, EvolutiveSolution)>> = levels
        .par_iter()
        .map(|lv| {
            let grid = TorusGrid::new(lv.n_side)?;
            let p = family(grid, lv.n_steps)?;
            let sol = into_result(solve_evolutive_report(&p, cfg)?)?;
            Ok((p, sol))
        })
        .collect();
    let solved = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (fine_p, fine) = solved.last().expect("at least two levels");
    let beta = fine_p.hamiltonian.beta();
    let m_exponent = match fine_p.cost.local() {
        Some(c) => 2.0 - c.eta2,
        None => 2.0,
    };
    let mut rows = Vec::new();
    for (p, sol) in &solved[..solved.len() - 1] {
        let (su, gu, em) = level_errors(sol, fine, beta, m_exponent)?;
        rows.push(LevelErrors {
            n_side: p.grid().n_side(),
            n_steps: p.mesh.n_steps(),
            h: p.grid().h(),
            dt: p.mesh.dt(),
            err_u_sup: su,
            err_u_w1beta: gu,
            err_m: em,
            outer_iters: sol.outer_iters,
            densities: sol.density_diagnostics(),
            monitors: sol.monitors.clone(),
        });
    }
    let orders = rows
        .windows(2)
        .map(|w| {
            let r = (w[0].h / w[1].h).ln();
            ObservedOrders {
                u_sup: (w[0].err_u_sup / w[1].err_u_sup).ln() / r,
                u_w1beta: (w[0].err_u_w1beta / w[1].err_u_w1beta).ln() / r,
                m: (w[0].err_m / w[1].err_m).ln() / r,
            }
        })
        .collect();
    let noise_floor = 10.0 * cfg.fixed_point.outer_tol;
    let strictly_decreasing = decreasing(rows.iter().map(|r| r.err_u_sup), noise_floor)
        && decreasing(rows.iter().map(|r| r.err_u_w1beta), noise_floor)
        && decreasing(rows.iter().map(|r| r.err_m), noise_floor);
    Ok(StudyReport {
        beta,
        m_norm_exponent: m_exponent,
        levels: rows,
        finest: *levels.last().expect("checked"),
        finest_outer_iters: fine.outer_iters,
        finest_densities: fine.density_diagnostics(),
        finest_monitors: fine.monitors.clone(),
        orders,
        noise_floor,
        strictly_decreasing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicLevel {
    pub n_side: usize,
    pub lambda: f64,
    pub outer_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicStudyReport {
    pub levels: Vec<ErgodicLevel>,
    /// `|lambda_{k+1} - lambda_k|`.
    pub increments: Vec<f64>,
    pub increments_decreasing: bool,
}

/// Effective constants across nested grids.
pub fn ergodic_study<F>(family: F, sides: &[usize], cfg: &SolverConfig) -> Result<ErgodicStudyReport>
where
    F: Fn(TorusGrid) -> Result<ErgodicProblem> + Sync,
{
    let as_levels: Vec<StudyLevel> = sides.iter().map(|&n| (n, n).into()).collect();
    check_levels(&as_levels)?;
    let levels = sides
        .par_iter()
        .map(|&n| {
            let p = family(TorusGrid::new(n)?)?;
            let sol = solve_ergodic_report(&p, cfg)?;
            if !sol.converged {
                return Err(MfgError::OuterNonConvergence {
                    iters: sol.outer_iters,
                    last_change: sol.final_change,
                });
            }
            Ok(ErgodicLevel {
                n_side: n,
                lambda: sol.lambda,
                outer_iters: sol.outer_iters,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let increments: Vec<f64> = levels
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda).abs())
        .collect();
    let increments_decreasing = increments.windows(2).all(|w| w[1] < w[0]);
    Ok(ErgodicStudyReport {
        levels,
        increments,
        increments_decreasing,
    })
}
