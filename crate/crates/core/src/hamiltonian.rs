//! Upwind numerical Hamiltonian for `H(x, p) = calH(x) + |p|^beta`.
//!
//! The four one-sided differences `q` enter only through their upwind part
//! `p = (q1^-, q2^+, q3^-, q4^+)` and `g(x, q) = calH(x) + |p|^beta`.

use crate::error::{invalid, Result};
use crate::grid::{dh_at, norm4, GridField, SpaceTimeField};

/// The four one-sided differences at a node, ordered as `[D_h u]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadArg(pub [f64; 4]);

/// Upwind part `(q1^-, q2^+, q3^-, q4^+)`; every component is nonnegative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpwindPart(pub [f64; 4]);

impl QuadArg {
    pub fn upwind(&self) -> UpwindPart {
        let q = self.0;
        UpwindPart([(-q[0]).max(0.0), q[1].max(0.0), (-q[2]).max(0.0), q[3].max(0.0)])
    }
}

impl UpwindPart {
    pub fn norm(&self) -> f64 {
        norm4(&self.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn distance(&self, other: &UpwindPart) -> f64 {
        let d = [
            self.0[0] - other.0[0],
            self.0[1] - other.0[1],
            self.0[2] - other.0[2],
            self.0[3] - other.0[3],
        ];
        norm4(&d)
    }
}

/// `G(p) = |p|^beta`.
pub fn power_g(beta: f64, p: &UpwindPart) -> f64 {
    let s = p.0.iter().map(|v| v * v).sum::<f64>();
    s.powf(0.5 * beta)
}

/// `G_p(p) = beta |p|^(beta-2) p`, extended by zero at `p = 0`.
pub fn power_g_grad(beta: f64, p: &UpwindPart) -> [f64; 4] {
    let r = p.norm();
    if r == 0.0 {
        return [0.0; 4];
    }
    let c = beta * r.powf(beta - 2.0);
    [c * p.0[0], c * p.0[1], c * p.0[2], c * p.0[3]]
}

/// `G_pp(p) = beta |p|^(beta-2) I + beta (beta-2) |p|^(beta-4) p p^T`, for `p != 0`.
pub fn power_g_hessian(beta: f64, p: &UpwindPart) -> [[f64; 4]; 4] {
    let r = p.norm();
    let a = beta * r.powf(beta - 2.0);
    let b = beta * (beta - 2.0) * r.powf(beta - 4.0);
    let mut out = [[0.0; 4]; 4];
    for (k, row) in out.iter_mut().enumerate() {
        for (l, e) in row.iter_mut().enumerate() {
            *e = b * p.0[k] * p.0[l] + if k == l { a } else { 0.0 };
        }
    }
    out
}

/// A numerical Hamiltonian `g(x_node, q)` together with its `q`-gradient.
pub trait NumericalHamiltonian: Sync {
    fn value(&self, node: usize, q: &QuadArg) -> f64;
    fn grad(&self, node: usize, q: &QuadArg) -> [f64; 4];
}

/// `g(x, q) = calH(x) + |p|^beta` with `calH` sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerHamiltonian {
    beta: f64,
    calh: GridField,
    calh_grad_bound: Option<f64>,
}

impl PowerHamiltonian {
    pub fn new(beta: f64, calh: GridField) -> Result<Self> {
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("beta > 1 is required, got {beta}")));
        }
        Ok(Self {
            beta,
            calh,
            calh_grad_bound: None,
        })
    }

    pub fn with_grad_bound(mut self, bound: f64) -> Self {
        self.calh_grad_bound = Some(bound);
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn calh(&self) -> &GridField {
        &self.calh
    }

    pub fn calh_grad_bound(&self) -> Option<f64> {
        self.calh_grad_bound
    }

    pub fn g_value(&self, node: usize, q: &QuadArg) -> f64 {
        self.calh.values()[node] + power_g(self.beta, &q.upwind())
    }

    /// `dg/dq_k`: `-G_p(p)_k` for `k = 1, 3` and `+G_p(p)_k` for `k = 2, 4`.
    pub fn g_grad(&self, q: &QuadArg) -> [f64; 4] {
        let gp = power_g_grad(self.beta, &q.upwind());
        [-gp[0], gp[1], -gp[2], gp[3]]
    }

    /// Bregman gap `g(q~) - g(q) - g_q(q).(q~ - q)`; `calH` cancels.
    pub fn bregman_gap(&self, q: &QuadArg, q_tilde: &QuadArg) -> f64 {
        bregman_gap_with(self, 0, q, q_tilde)
    }
}

impl NumericalHamiltonian for PowerHamiltonian {
    fn value(&self, node: usize, q: &QuadArg) -> f64 {
        self.g_value(node, q)
    }

    fn grad(&self, _node: usize, q: &QuadArg) -> [f64; 4] {
        self.g_grad(q)
    }
}

pub fn bregman_gap_with<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    node: usize,
    q: &QuadArg,
    q_tilde: &QuadArg,
) -> f64 {
    let gq = ham.grad(node, q);
    let lin: f64 = (0..4).map(|k| gq[k] * (q_tilde.0[k] - q.0[k])).sum();
    ham.value(node, q_tilde) - ham.value(node, q) - lin
}

/// `sum_{n=1}^{N_T} sum_{i,j} m^{n-1}_{i,j} * gap([D_h u^n], [D_h u~^n])`, unweighted.
pub fn functional_g<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    m: &SpaceTimeField,
    u: &SpaceTimeField,
    u_tilde: &SpaceTimeField,
) -> Result<f64> {
    m.check_compatible(u)?;
    m.check_compatible(u_tilde)?;
    let grid = m.grid();
    let mut total = 0.0;
    for n in 1..=m.mesh().n_steps() {
        let (mp, un, utn) = (m.slice(n - 1), u.slice(n), u_tilde.slice(n));
        for k in 0..grid.len() {
            let weight = mp.values()[k];
            if weight == 0.0 {
                continue;
            }
            let (i, j) = grid.coords(k);
            let q = QuadArg(dh_at(un, i, j));
            let qt = QuadArg(dh_at(utn, i, j));
            total += weight * bregman_gap_with(ham, k, &q, &qt);
        }
    }
    Ok(total)
}

/// Upwind parts `p^n_{i,j}` of `[D_h u^n]` at every node, for one slice.
pub fn upwind_field(u: &GridField) -> Vec<UpwindPart> {
    let grid = u.grid();
    (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            QuadArg(dh_at(u, i, j)).upwind()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    fn zero_h(beta: f64) -> PowerHamiltonian {
        PowerHamiltonian::new(beta, GridField::zeros(TorusGrid::new(4).unwrap())).unwrap()
    }

    #[test]
    fn beta_must_exceed_one() {
        let g = GridField::zeros(TorusGrid::new(2).unwrap());
        assert!(PowerHamiltonian::new(1.0, g.clone()).is_err());
        assert!(PowerHamiltonian::new(0.5, g.clone()).is_err());
        assert!(PowerHamiltonian::new(1.0001, g).is_ok());
    }

    #[test]
    fn g_value_examples() {
        let h = zero_h(2.0);
        assert_eq!(h.g_value(0, &QuadArg([1.0, -1.0, 2.0, -2.0])), 0.0);
        assert_eq!(h.g_value(0, &QuadArg([-1.0, 1.0, -1.0, 1.0])), 4.0);
        assert!((h.g_value(0, &QuadArg([3.0, 3.0, 4.0, 4.0])) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn g_grad_examples() {
        assert_eq!(zero_h(2.0).g_grad(&QuadArg([0.0; 4])), [0.0; 4]);
        let g = zero_h(2.0).g_grad(&QuadArg([-1.0, 1.0, -1.0, 1.0]));
        assert_eq!(g, [-2.0, 2.0, -2.0, 2.0]);
        let g = zero_h(3.0).g_grad(&QuadArg([-1.0, 0.0, 0.0, 0.0]));
        assert_eq!(g, [-3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bregman_examples() {
        let h = zero_h(2.0);
        let q = QuadArg([0.3, -0.2, 1.1, 0.5]);
        assert_eq!(h.bregman_gap(&q, &q), 0.0);
        assert_eq!(
            h.bregman_gap(&QuadArg([0.0; 4]), &QuadArg([-1.0, 1.0, -1.0, 1.0])),
            4.0
        );
    }

    #[test]
    fn hessian_at_beta_two_is_twice_identity() {
        let hess = power_g_hessian(2.0, &UpwindPart([0.3, 0.0, 1.2, 4.0]));
        for (k, row) in hess.iter().enumerate() {
            for (l, &e) in row.iter().enumerate() {
                assert_eq!(e, if k == l { 2.0 } else { 0.0 });
            }
        }
    }
}
