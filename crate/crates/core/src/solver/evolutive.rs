//! The finite-horizon system: Bellman forward from `u^0 = u0`, Fokker-Planck
//! backward from `m^{N_T} = mT`, coupled through `Phi_h[m^n]`.

use serde::{Deserialize, Serialize};

use super::identity::{fp_residuals, hjb_residuals};
use super::monitors::{apriori_monitors, AprioriMonitors};
use super::{damped_picard, FixedPointConfig, SolverConfig};
use crate::cost::{CostOperator, DiscreteDensity};
use crate::dynamics::{fp_step, hjb_step_with_fallback};
use crate::error::{invalid, MfgError, Result};
use crate::grid::{GridField, SpaceTimeField, TimeMesh, TorusGrid};
use crate::hamiltonian::PowerHamiltonian;

#[derive(Clone, Debug)]
pub struct EvolutiveProblem {
    pub nu: f64,
    pub hamiltonian: PowerHamiltonian,
    pub cost: CostOperator,
    pub u0: GridField,
    pub m_terminal: DiscreteDensity,
    pub mesh: TimeMesh,
}

impl EvolutiveProblem {
    pub fn new(
        nu: f64,
        hamiltonian: PowerHamiltonian,
        cost: CostOperator,
        u0: GridField,
        m_terminal: DiscreteDensity,
        mesh: TimeMesh,
    ) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("nu > 0 is required, got {nu}")));
        }
        let grid = u0.grid();
        grid.check_same(&m_terminal.grid())?;
        grid.check_same(&hamiltonian.calh().grid())?;
        let cost = cost.on_grid(grid);
        Ok(Self {
            nu,
            hamiltonian,
            cost,
            u0,
            m_terminal,
            mesh,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.u0.grid()
    }

    /// `Phi_h[m^n]` for `n = 0..N_T`.
    pub fn cost_fields(&self, m: &SpaceTimeField) -> Result<Vec<GridField>> {
        m.slices().iter().map(|s| self.cost.apply(s)).collect()
    }
}

/// Worst simplex violations over all density slices of a solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityDiagnostics {
    /// `max_n |h^2 sum m^n - 1|`.
    pub max_mass_deviation: f64,
    pub min_density: f64,
    pub max_clamp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutiveSolution {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    pub outer_iters: usize,
    /// Fixed-point change after each outer iteration.
    pub residual_history: Vec<f64>,
    pub final_change: f64,
    /// Sup-norm residuals of both discrete equations at the returned pair.
    pub hjb_residual: f64,
    pub fp_residual: f64,
    /// Largest clamp magnitude applied by any Fokker-Planck step.
    pub max_clamp: f64,
    pub newton_fallbacks: usize,
    pub monitors: Option<AprioriMonitors>,
    pub converged: bool,
}

impl EvolutiveSolution {
    pub fn density_diagnostics(&self) -> DensityDiagnostics {
        DensityDiagnostics {
            max_mass_deviation: self
                .m
                .slices()
                .iter()
                .map(|s| (s.mass() - 1.0).abs())
                .fold(0.0, f64::max),
            min_density: self.m.min(),
            max_clamp: self.max_clamp,
        }
    }
}

struct Sweep {
    u: SpaceTimeField,
    m: SpaceTimeField,
    clamp: f64,
    fallbacks: usize,
}

fn sweep(
    p: &EvolutiveProblem,
    cfg: &SolverConfig,
    m: &SpaceTimeField,
    warm: Option<&SpaceTimeField>,
) -> Result<Sweep> {
    let mesh = p.mesh;
    let dt = mesh.dt();
    let nt = mesh.n_steps();
    let phi = p.cost_fields(m)?;
    let mut u = Vec::with_capacity(nt + 1);
    u.push(p.u0.clone());
    let mut fallbacks = 0;
    for n in 0..nt {
        let guess = warm.map_or_else(|| u[n].clone(), |w| w.slice(n + 1).clone());
        let (next, stats) = hjb_step_with_fallback(
            &p.hamiltonian,
            p.nu,
            dt,
            &u[n],
            &phi[n],
            guess,
            &cfg.hjb,
            &cfg.linear,
        )?;
        fallbacks += usize::from(stats.used_fallback);
        u.push(next);
    }
    let mut ms = vec![GridField::zeros(p.grid()); nt + 1];
    ms[nt] = p.m_terminal.field().clone();
    let mut clamp: f64 = 0.0;
    for n in (0..nt).rev() {
        let step = fp_step(&p.hamiltonian, p.nu, dt, &u[n + 1], &ms[n + 1], &cfg.linear)?;
        clamp = clamp.max(step.clamp);
        ms[n] = step.m;
    }
    Ok(Sweep {
        u: SpaceTimeField::from_slices(mesh, u)?,
        m: SpaceTimeField::from_slices(mesh, ms)?,
        clamp,
        fallbacks,
    })
}

/// `sup_n h^2 sum |m^n - m~^n|`.
pub fn trajectory_distance(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    a.slices()
        .iter()
        .zip(b.slices())
        .map(|(x, y)| x.sub(y).weighted_lp_norm(1.0))
        .fold(0.0, f64::max)
}

fn mix(a: &SpaceTimeField, b: &SpaceTimeField, theta: f64) -> SpaceTimeField {
    let slices = a
        .slices()
        .iter()
        .zip(b.slices())
        .map(|(x, y)| x.zip_map(y, |p, q| (1.0 - theta) * p + theta * q))
        .collect();
    SpaceTimeField::from_slices(a.mesh(), slices).expect("matching meshes")
}

/// Sup-norm residuals of both equations at `(u, m)`.
pub fn evolutive_residuals(
    p: &EvolutiveProblem,
    u: &SpaceTimeField,
    m: &SpaceTimeField,
) -> Result<(f64, f64)> {
    let a = hjb_residuals(&p.hamiltonian, p.nu, &p.cost, u, m)?;
    let b = fp_residuals(&p.hamiltonian, p.nu, u, m)?;
    Ok((a.sup_norm(), b.sup_norm()))
}

/// Runs the outer iteration from `m_init` and reports whether it converged.
pub fn solve_evolutive_from(
    p: &EvolutiveProblem,
    cfg: &SolverConfig,
    m_init: SpaceTimeField,
) -> Result<EvolutiveSolution> {
    cfg.validate()?;
    if m_init.mesh() != p.mesh {
        return Err(MfgError::MeshMismatch(
            "initial trajectory and problem use different time meshes".into(),
        ));
    }
    p.grid().check_same(&m_init.grid())?;
    let tol = cfg.fixed_point.outer_tol;
    // The residuals cannot drop below the inner Newton tolerance.
    let residual_tol = tol.max(10.0 * cfg.hjb.newton_tol);
    let mut history = Vec::new();
    let mut warm: Option<SpaceTimeField> = None;
    let mut max_clamp: f64 = 0.0;
    let mut fallbacks = 0;
    let mut residuals = (f64::INFINITY, f64::INFINITY);
    let out = damped_picard(
        &cfg.fixed_point,
        m_init,
        |m| {
            let s = sweep(p, cfg, m, warm.as_ref())?;
            warm = Some(s.u.clone());
            max_clamp = max_clamp.max(s.clamp);
            fallbacks += s.fallbacks;
            Ok(s)
        },
        |s| &s.m,
        trajectory_distance,
        mix,
        |_, s, change| {
            if change >= tol {
                return Ok(false);
            }
            residuals = evolutive_residuals(p, &s.u, &s.m)?;
            Ok(residuals.0 <= residual_tol && residuals.1 <= residual_tol)
        },
        &mut history,
    )?;
    if !out.converged || !residuals.0.is_finite() {
        residuals = evolutive_residuals(p, &out.eval.u, &out.eval.m)?;
    }
    let monitors = match p.cost.local() {
        Some(local) => Some(apriori_monitors(&out.eval.u, &out.eval.m, &p.hamiltonian, local)),
        None => None,
    };
    Ok(EvolutiveSolution {
        u: out.eval.u,
        m: out.eval.m,
        outer_iters: out.iterations,
        residual_history: history,
        final_change: out.change,
        hjb_residual: residuals.0,
        fp_residual: residuals.1,
        max_clamp,
        newton_fallbacks: fallbacks,
        monitors,
        converged: out.converged,
    })
}

/// Runs the outer iteration from `m^n = mT` without failing on
/// non-convergence; check `converged`.
pub fn solve_evolutive_report(p: &EvolutiveProblem, cfg: &SolverConfig) -> Result<EvolutiveSolution> {
    let init = SpaceTimeField::broadcast(p.mesh, p.m_terminal.field());
    solve_evolutive_from(p, cfg, init)
}

/// Solves the evolutive system with default step and linear-solver settings.
pub fn solve_evolutive(p: &EvolutiveProblem, cfg: &FixedPointConfig) -> Result<EvolutiveSolution> {
    let full = SolverConfig {
        fixed_point: *cfg,
        ..SolverConfig::default()
    };
    into_result(solve_evolutive_report(p, &full)?)
}

pub(crate) fn into_result(sol: EvolutiveSolution) -> Result<EvolutiveSolution> {
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
    use crate::cost::LocalCost;

    #[test]
    fn uniform_exact_solution() {
        let grid = TorusGrid::new(8).unwrap();
        let mesh = TimeMesh::new(1.0, 8).unwrap();
        let p = EvolutiveProblem::new(
            1.0,
            PowerHamiltonian::new(2.0, GridField::zeros(grid)).unwrap(),
            CostOperator::Local(LocalCost::linear()),
            GridField::zeros(grid),
            DiscreteDensity::uniform(grid),
            mesh,
        )
        .unwrap();
        let sol = solve_evolutive(&p, &FixedPointConfig::default()).unwrap();
        for n in 0..=8 {
            let t = n as f64 * mesh.dt();
            assert!(sol.u.slice(n).values().iter().all(|&v| (v - t).abs() < 1e-12));
            assert!(sol.m.slice(n).values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }
}
