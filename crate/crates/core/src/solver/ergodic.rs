//! The stationary system
//! `-nu Delta_h u + g(x, [D_h u]) + lambda = F(m)`, `-nu Delta_h m - T(u, m) = 0`,
//! `h^2 sum u = 0`, `h^2 sum m = 1`.

use serde::{Deserialize, Serialize};

use super::{damped_picard, SolverConfig};
use crate::cost::LocalCost;
use crate::dynamics::{adjoint_apply, hamiltonian_field, linearized_matrix, LinearSolveContract};
use crate::dynamics::HjbStepConfig;
use crate::error::{invalid, MfgError, Result};
use crate::grid::{laplace5, GridField, TorusGrid};
use crate::hamiltonian::{NumericalHamiltonian, PowerHamiltonian};
use crate::sparse::{BandedLu, FoldOrdering};

/// Diagonal shift of the inverse power iteration.
pub const INVERSE_POWER_SHIFT: f64 = 1e-8;
pub const INVERSE_POWER_MAX_ITERS: usize = 50;

#[derive(Clone, Debug)]
pub struct ErgodicProblem {
    pub nu: f64,
    pub hamiltonian: PowerHamiltonian,
    pub cost: LocalCost,
}

impl ErgodicProblem {
    pub fn new(nu: f64, hamiltonian: PowerHamiltonian, cost: LocalCost) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("nu > 0 is required, got {nu}")));
        }
        Ok(Self {
            nu,
            hamiltonian,
            cost,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.hamiltonian.calh().grid()
    }

    fn cost_field(&self, m: &GridField) -> GridField {
        m.map(|v| self.cost.f(v.max(0.0)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicSolution {
    pub u: GridField,
    pub m: GridField,
    pub lambda: f64,
    pub outer_iters: usize,
    pub residual_history: Vec<f64>,
    pub final_change: f64,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub mass_residual: f64,
    pub u_mean: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicResiduals {
    pub hjb: f64,
    pub fp: f64,
    pub mass: f64,
    pub u_mean: f64,
}

impl ErgodicResiduals {
    pub fn max(&self) -> f64 {
        self.hjb.max(self.fp).max(self.mass).max(self.u_mean)
    }
}

/// `-nu Delta_h u + g(x, [D_h u]) + lambda - phi`.
pub fn ergodic_hjb_residual<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    lambda: f64,
    phi: &GridField,
) -> GridField {
    let lap = laplace5(u);
    let g = hamiltonian_field(ham, u);
    let values = (0..u.grid().len())
        .map(|k| -nu * lap.values()[k] + g.values()[k] + lambda - phi.values()[k])
        .collect();
    GridField::from_values(u.grid(), values).expect("grid-sized values")
}

/// Residuals of all four lines of the stationary system.
pub fn ergodic_residuals(
    p: &ErgodicProblem,
    u: &GridField,
    lambda: f64,
    m: &GridField,
) -> Result<ErgodicResiduals> {
    let phi = p.cost_field(m);
    let hjb = ergodic_hjb_residual(&p.hamiltonian, p.nu, u, lambda, &phi).sup_norm();
    let fp = adjoint_apply(&p.hamiltonian, p.nu, u, m)?.sup_norm();
    Ok(ErgodicResiduals {
        hjb,
        fp,
        mass: (m.mass() - 1.0).abs(),
        u_mean: u.mass().abs(),
    })
}

fn remove_mean(u: &GridField) -> GridField {
    let mean = u.sum() / u.grid().len() as f64;
    u.map(|v| v - mean)
}

/// Newton on `(u, lambda)` for `-nu Delta_h u + g + lambda = phi`. The
/// Jacobian `[L_u | 1]` has the constants in its kernel; the column of the
/// unknown placed last in band order is replaced by the `lambda` column, which
/// pins that entry of the update to zero. The mean is removed afterwards.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_hjb_solve<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    phi: &GridField,
    u_guess: &GridField,
    lambda_guess: f64,
    cfg: &HjbStepConfig,
    lin: &LinearSolveContract,
) -> Result<(GridField, f64)> {
    let grid = phi.grid();
    grid.check_same(&u_guess.grid())?;
    let last = FoldOrdering::new(grid).last_unknown();
    let h = grid.h();
    let mut u = remove_mean(u_guess);
    let mut lambda = lambda_guess;
    let mut r = ergodic_hjb_residual(ham, nu, &u, lambda, phi);
    let mut r_norm = r.sup_norm();
    for it in 0..=cfg.max_newton {
        let scale = 8.0 * nu * u.sup_norm() / (h * h)
            + hamiltonian_field(ham, &u).sup_norm()
            + lambda.abs()
            + phi.sup_norm();
        if r_norm <= cfg.newton_tol.max(32.0 * f64::EPSILON * scale) {
            return Ok((u, lambda));
        }
        if it == cfg.max_newton {
            break;
        }
        let mut jac = linearized_matrix(ham, nu, &u, 0.0);
        jac.set_column(last, &vec![1.0; grid.len()]);
        let rhs: Vec<f64> = r.values().iter().map(|v| -v).collect();
        let x = lin.solve(&jac, grid, &rhs)?;
        let dlambda = x[last];
        let mut t = 1.0;
        let mut accepted = false;
        while t >= cfg.min_step {
            let values = (0..grid.len())
                .map(|k| u.values()[k] + if k == last { 0.0 } else { t * x[k] })
                .collect();
            let trial = remove_mean(&GridField::from_values(grid, values)?);
            let trial_lambda = lambda + t * dlambda;
            let rt = ergodic_hjb_residual(ham, nu, &trial, trial_lambda, phi);
            let rt_norm = rt.sup_norm();
            if rt_norm <= (1.0 - cfg.armijo_c * t) * r_norm {
                u = trial;
                lambda = trial_lambda;
                r = rt;
                r_norm = rt_norm;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(MfgError::NonConvergence {
                iterations: it + 1,
                final_residual: r_norm,
            });
        }
    }
    Err(MfgError::NonConvergence {
        iterations: cfg.max_newton,
        final_residual: r_norm,
    })
}

/// Density in the kernel of `A_u = L_u^T`, by inverse iteration on
/// `A_u + INVERSE_POWER_SHIFT I` with unit-mass normalization.
pub fn stationary_density<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    m_guess: &GridField,
) -> Result<GridField> {
    let grid = u.grid();
    let mut a = linearized_matrix(ham, nu, u, 0.0).transpose();
    a.shift_diagonal(INVERSE_POWER_SHIFT);
    let lu = BandedLu::factor(&a, grid)?;
    let mut m = m_guess.scale(1.0 / m_guess.mass());
    for _ in 0..INVERSE_POWER_MAX_ITERS {
        let x = GridField::from_values(grid, lu.solve(m.values()))?;
        let top = x.sup_norm();
        if x.min() < -1e-12 * top {
            let node = (0..grid.len())
                .min_by(|&i, &j| x.values()[i].total_cmp(&x.values()[j]))
                .unwrap_or(0);
            return Err(MfgError::NegativeDensity {
                node,
                value: x.values()[node] / top,
            });
        }
        let x = x.map(|v| v.max(0.0));
        let next = x.scale(1.0 / x.mass());
        let change = next.sub(&m).sup_norm();
        m = next;
        if change <= 1e-13 * m.sup_norm() {
            return Ok(m);
        }
    }
    Err(MfgError::InversePowerStall {
        iterations: INVERSE_POWER_MAX_ITERS,
    })
}

struct ErgodicEval {
    u: GridField,
    lambda: f64,
    m: GridField,
}

/// Runs the outer iteration from the uniform density without failing on
/// non-convergence; check `converged`.
pub fn solve_ergodic_report(p: &ErgodicProblem, cfg: &SolverConfig) -> Result<ErgodicSolution> {
    cfg.validate()?;
    let grid = p.grid();
    let tol = cfg.fixed_point.outer_tol;
    let mut history = Vec::new();
    let mut warm = (GridField::zeros(grid), 0.0);
    let mut last_res: Option<ErgodicResiduals> = None;
    let out = damped_picard(
        &cfg.fixed_point,
        GridField::constant(grid, 1.0),
        |m| {
            let phi = p.cost_field(m);
            let (u, lambda) = ergodic_hjb_solve(
                &p.hamiltonian,
                p.nu,
                &phi,
                &warm.0,
                warm.1,
                &cfg.hjb,
                &cfg.linear,
            )?;
            let m_new = stationary_density(&p.hamiltonian, p.nu, &u, m)?;
            warm = (u.clone(), lambda);
            Ok(ErgodicEval { u, lambda, m: m_new })
        },
        |e| &e.m,
        |a, b| a.sub(b).weighted_lp_norm(1.0),
        |a, b, theta| a.zip_map(b, |x, y| (1.0 - theta) * x + theta * y),
        |_, e, change| {
            if change >= tol {
                return Ok(false);
            }
            let res = ergodic_residuals(p, &e.u, e.lambda, &e.m)?;
            last_res = Some(res);
            Ok(res.max() <= 10.0 * tol.max(cfg.hjb.newton_tol))
        },
        &mut history,
    )?;
    let res = match last_res {
        Some(r) if out.converged => r,
        _ => ergodic_residuals(p, &out.eval.u, out.eval.lambda, &out.eval.m)?,
    };
    Ok(ErgodicSolution {
        u: out.eval.u,
        m: out.eval.m,
        lambda: out.eval.lambda,
        outer_iters: out.iterations,
        residual_history: history,
        final_change: out.change,
        hjb_residual: res.hjb,
        fp_residual: res.fp,
        mass_residual: res.mass,
        u_mean: res.u_mean,
        converged: out.converged,
    })
}

pub fn solve_ergodic(p: &ErgodicProblem, cfg: &super::FixedPointConfig) -> Result<ErgodicSolution> {
    let full = SolverConfig {
        fixed_point: *cfg,
        ..SolverConfig::default()
    };
    let sol = solve_ergodic_report(p, &full)?;
    if sol.converged {
        Ok(sol)
    } else {
        Err(MfgError::OuterNonConvergence {
            iters: sol.outer_iters,
            last_change: sol.final_change,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::FixedPointConfig;

    #[test]
    fn constant_hamiltonian_shifts_lambda() {
        let grid = TorusGrid::new(8).unwrap();
        for c in [0.0, 0.3] {
            let p = ErgodicProblem::new(
                1.0,
                PowerHamiltonian::new(2.0, GridField::constant(grid, c)).unwrap(),
                LocalCost::linear(),
            )
            .unwrap();
            let sol = solve_ergodic(&p, &FixedPointConfig::default()).unwrap();
            assert!((sol.lambda - (1.0 - c)).abs() < 1e-12);
            assert!(sol.u.sup_norm() < 1e-12);
            assert!(sol.m.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }
}
