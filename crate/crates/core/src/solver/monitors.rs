//! A priori quantities that stay bounded under refinement for local costs.

use serde::{Deserialize, Serialize};

use crate::cost::LocalCost;
use crate::grid::{stencil_power_sum, SpaceTimeField};
use crate::hamiltonian::PowerHamiltonian;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriMonitors {
    /// `min_{n,i,j} u^n_{i,j}`.
    pub lower_bound_u: f64,
    /// `h^2 dt sum_{n=1}^{N_T} sum |[D_h u^n]|^beta`.
    pub gradient_energy: f64,
    /// `h^2 dt sum_{n=0}^{N_T-1} sum |F(m^n)|^gamma`.
    pub cost_energy: f64,
    /// `max_n h^2 sum |u^n|`.
    pub u_l1_max: f64,
    /// `U^n = h^2 sum u^n`.
    pub un_path: Vec<f64>,
    /// `sum_n |U^{n+1} - U^n|`.
    pub un_total_variation: f64,
}

impl AprioriMonitors {
    /// Largest magnitude among the monitored bounds.
    pub fn max_magnitude(&self) -> f64 {
        [
            self.lower_bound_u.abs(),
            self.gradient_energy,
            self.cost_energy,
            self.u_l1_max,
            self.un_total_variation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn apriori_monitors(
    u: &SpaceTimeField,
    m: &SpaceTimeField,
    ham: &PowerHamiltonian,
    cost: &LocalCost,
) -> AprioriMonitors {
    let mesh = u.mesh();
    let nt = mesh.n_steps();
    let h = u.grid().h();
    let w = h * h * mesh.dt();
    let beta = ham.beta();
    let gradient_energy = w * (1..=nt).map(|n| stencil_power_sum(u.slice(n), beta)).sum::<f64>();
    let cost_energy = w * (0..nt)
        .map(|n| {
            m.slice(n)
                .values()
                .iter()
                .map(|&v| cost.f(v.max(0.0)).abs().powf(cost.gamma))
                .sum::<f64>()
        })
        .sum::<f64>();
    let un_path: Vec<f64> = u.slices().iter().map(|s| s.mass()).collect();
    let un_total_variation = un_path.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    AprioriMonitors {
        lower_bound_u: u.min(),
        gradient_energy,
        cost_energy,
        u_l1_max: u.slices().iter().map(|s| s.weighted_lp_norm(1.0)).fold(0.0, f64::max),
        un_path,
        un_total_variation,
    }
}
