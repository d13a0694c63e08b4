//! Residuals of the discrete system and the energy identity relating two
//! arbitrary trajectory pairs.
//!
//! For pairs `(u, m)` and `(u~, m~)` with residuals `(a0, b0)` and `(a, b)`,
//! `du = u - u~` and `dm = m - m~`, summing the paired differences of both
//! equations over `n` gives
//!
//! ```text
//! -(dm^N, du^N)/dt + (dm^0, du^0)/dt + G(m, u, u~) + G(m~, u~, u)
//!     + sum_{n<N} (Phi[m^n] - Phi[m~^n], dm^n)
//!   = sum_{n<N} (a^n - a0^n, dm^n) + sum_{n<N} (b^n - b0^n, du^{n+1})
//! ```
//!
//! with unweighted pairings. When `(u, m)` solves the scheme, `a0 = b0 = 0`.

use serde::{Deserialize, Serialize};

use crate::cost::CostOperator;
use crate::dynamics::{hjb_residual, transport_apply};
use crate::error::Result;
use crate::grid::{inner2, laplace5, GridField, SpaceTimeField};
use crate::hamiltonian::{functional_g, NumericalHamiltonian};

/// Residuals `(a^n, b^n)` of a perturbed pair; slice `N_T` is unused (zero).
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationPair {
    pub a: SpaceTimeField,
    pub b: SpaceTimeField,
}

impl PerturbationPair {
    pub fn zero(like: &SpaceTimeField) -> Self {
        Self {
            a: SpaceTimeField::zeros(like.mesh(), like.grid()),
            b: SpaceTimeField::zeros(like.mesh(), like.grid()),
        }
    }

    /// The residuals of `(u, m)`, which makes the perturbed system hold exactly.
    pub fn of<H: NumericalHamiltonian + ?Sized>(
        ham: &H,
        nu: f64,
        cost: &CostOperator,
        u: &SpaceTimeField,
        m: &SpaceTimeField,
    ) -> Result<Self> {
        Ok(Self {
            a: hjb_residuals(ham, nu, cost, u, m)?,
            b: fp_residuals(ham, nu, u, m)?,
        })
    }
}

/// `a^n = (u^{n+1} - u^n)/dt - nu Delta_h u^{n+1} + g(x, [D_h u^{n+1}]) - Phi_h[m^n]`.
pub fn hjb_residuals<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    cost: &CostOperator,
    u: &SpaceTimeField,
    m: &SpaceTimeField,
) -> Result<SpaceTimeField> {
    u.check_compatible(m)?;
    let mesh = u.mesh();
    let nt = mesh.n_steps();
    let mut out = Vec::with_capacity(nt + 1);
    for n in 0..nt {
        let phi = cost.apply(m.slice(n))?;
        out.push(hjb_residual(ham, nu, mesh.dt(), u.slice(n + 1), u.slice(n), &phi)?);
    }
    out.push(GridField::zeros(u.grid()));
    SpaceTimeField::from_slices(mesh, out)
}

/// `b^n = (m^{n+1} - m^n)/dt + nu Delta_h m^n + T(u^{n+1}, m^n)`.
pub fn fp_residuals<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &SpaceTimeField,
    m: &SpaceTimeField,
) -> Result<SpaceTimeField> {
    u.check_compatible(m)?;
    let mesh = u.mesh();
    let nt = mesh.n_steps();
    let inv_dt = 1.0 / mesh.dt();
    let mut out = Vec::with_capacity(nt + 1);
    for n in 0..nt {
        let t = transport_apply(ham, u.slice(n + 1), m.slice(n))?;
        let lap = laplace5(m.slice(n));
        let values = (0..u.grid().len())
            .map(|k| {
                (m.slice(n + 1).values()[k] - m.slice(n).values()[k]) * inv_dt
                    + nu * lap.values()[k]
                    + t.values()[k]
            })
            .collect();
        out.push(GridField::from_values(u.grid(), values)?);
    }
    out.push(GridField::zeros(u.grid()));
    SpaceTimeField::from_slices(mesh, out)
}

/// Every group of the identity, and the gap between its two sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityTerms {
    /// `-(dm^N, du^N)/dt`.
    pub endpoint_final: f64,
    /// `(dm^0, du^0)/dt`.
    pub endpoint_initial: f64,
    /// `G(m, u, u~)`.
    pub g_forward: f64,
    /// `G(m~, u~, u)`.
    pub g_backward: f64,
    /// `sum_n (Phi[m^n] - Phi[m~^n], dm^n)`.
    pub cost_pairing: f64,
    /// `sum_n (a^n - a0^n, dm^n)`.
    pub pert_a: f64,
    /// `sum_n (b^n - b0^n, du^{n+1})`.
    pub pert_b: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Sum of the magnitudes of all summands, the natural roundoff scale.
    pub scale: f64,
}

fn abs_pairing(a: &GridField, b: &GridField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x * y).abs()).sum()
}

/// Evaluates both sides of the identity. `pert` holds the residuals of the
/// tilde pair; the residuals of `(u, m)` are recomputed so the identity holds
/// for any two pairs.
#[allow(clippy::too_many_arguments)]
pub fn identity_terms<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    cost: &CostOperator,
    sol: (&SpaceTimeField, &SpaceTimeField),
    sol_tilde: (&SpaceTimeField, &SpaceTimeField),
    pert: &PerturbationPair,
) -> Result<IdentityTerms> {
    let (u, m) = sol;
    let (ut, mt) = sol_tilde;
    u.check_compatible(m)?;
    u.check_compatible(ut)?;
    u.check_compatible(mt)?;
    u.check_compatible(&pert.a)?;
    u.check_compatible(&pert.b)?;
    let own = PerturbationPair::of(ham, nu, cost, u, m)?;
    let mesh = u.mesh();
    let nt = mesh.n_steps();
    let inv_dt = 1.0 / mesh.dt();
    let du = u.sub(ut);
    let dm = m.sub(mt);

    let endpoint_final = -inner2(dm.slice(nt), du.slice(nt)) * inv_dt;
    let endpoint_initial = inner2(dm.slice(0), du.slice(0)) * inv_dt;
    let mut scale = (abs_pairing(dm.slice(nt), du.slice(nt)) + abs_pairing(dm.slice(0), du.slice(0)))
        * inv_dt;

    let g_forward = functional_g(ham, m, u, ut)?;
    let g_backward = functional_g(ham, mt, ut, u)?;
    scale += g_forward.abs() + g_backward.abs();

    let (mut cost_pairing, mut pert_a, mut pert_b) = (0.0, 0.0, 0.0);
    for n in 0..nt {
        let dphi = cost.apply(m.slice(n))?.sub(&cost.apply(mt.slice(n))?);
        cost_pairing += inner2(&dphi, dm.slice(n));
        scale += abs_pairing(&dphi, dm.slice(n));
        let da = pert.a.slice(n).sub(own.a.slice(n));
        pert_a += inner2(&da, dm.slice(n));
        scale += abs_pairing(&da, dm.slice(n));
        let db = pert.b.slice(n).sub(own.b.slice(n));
        pert_b += inner2(&db, du.slice(n + 1));
        scale += abs_pairing(&db, du.slice(n + 1));
    }
    let lhs = endpoint_final + endpoint_initial + g_forward + g_backward + cost_pairing;
    let rhs = pert_a + pert_b;
    Ok(IdentityTerms {
        endpoint_final,
        endpoint_initial,
        g_forward,
        g_backward,
        cost_pairing,
        pert_a,
        pert_b,
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        scale,
    })
}

/// `|lhs - rhs|` of the identity.
pub fn fundamental_identity_gap<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    cost: &CostOperator,
    sol: (&SpaceTimeField, &SpaceTimeField),
    sol_tilde: (&SpaceTimeField, &SpaceTimeField),
    pert: &PerturbationPair,
) -> Result<f64> {
    identity_terms(ham, nu, cost, sol, sol_tilde, pert).map(|t| t.gap)
}
