//! One time step of the discrete Bellman and Fokker-Planck equations.
//!
//! The Bellman step is implicit in `u^{n+1}`:
//! `(u^{n+1} - u^n)/dt - nu Delta_h u^{n+1} + g(x, [D_h u^{n+1}]) = Phi_h[m^n]`,
//! and is solved by damped Newton. The Fokker-Planck step is implicit in
//! `m^n` and explicit in `u^{n+1}`; its matrix is the transpose of the Newton
//! Jacobian at `u^{n+1}`, so mass is conserved by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};
use crate::grid::{dh_at, inner2, laplace5, GridField, TorusGrid};
use crate::hamiltonian::{NumericalHamiltonian, QuadArg};
use crate::sparse::{solve_with_contract, SparseMatrix};

/// Negative values down to this magnitude are clamped to zero in the FP step.
pub const CLAMP_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HjbStepConfig {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub armijo_c: f64,
    pub min_step: f64,
}

impl Default for HjbStepConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-11,
            max_newton: 50,
            armijo_c: 1e-4,
            min_step: 2f64.powi(-20),
        }
    }
}

impl HjbStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(invalid("newton_tol", "must be positive"));
        }
        if self.max_newton == 0 {
            return Err(invalid("max_newton", "must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(invalid("armijo_c", "must lie in (0, 1)"));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(invalid("min_step", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMethod {
    /// Banded LU in folded row order with iterative refinement.
    #[default]
    BandedLu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSolveContract {
    pub method: LinearMethod,
    pub residual_tol: f64,
}

impl Default for LinearSolveContract {
    fn default() -> Self {
        Self {
            method: LinearMethod::BandedLu,
            residual_tol: 1e-12,
        }
    }
}

impl LinearSolveContract {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(invalid("residual_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn solve(&self, a: &SparseMatrix, grid: TorusGrid, b: &[f64]) -> Result<Vec<f64>> {
        match self.method {
            LinearMethod::BandedLu => solve_with_contract(a, grid, b, self.residual_tol),
        }
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

/// `g(x, [D_h u])` at every node.
pub fn hamiltonian_field<H: NumericalHamiltonian + ?Sized>(ham: &H, u: &GridField) -> GridField {
    let grid = u.grid();
    let values = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            ham.value(k, &QuadArg(dh_at(u, i, j)))
        })
        .collect();
    GridField::from_values(grid, values).expect("grid-sized values")
}

/// `g_q(x, [D_h u])` at every node.
pub fn hamiltonian_gradients<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    u: &GridField,
) -> Vec<[f64; 4]> {
    let grid = u.grid();
    (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            ham.grad(k, &QuadArg(dh_at(u, i, j)))
        })
        .collect()
}

/// `(u_next - u_cur)/dt - nu Delta_h u_next + g(x, [D_h u_next]) - phi`.
pub fn hjb_residual<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_next: &GridField,
    u_cur: &GridField,
    phi: &GridField,
) -> Result<GridField> {
    let grid = u_next.grid();
    grid.check_same(&u_cur.grid())?;
    grid.check_same(&phi.grid())?;
    let lap = laplace5(u_next);
    let g = hamiltonian_field(ham, u_next);
    let inv_dt = 1.0 / dt;
    let values = (0..grid.len())
        .map(|k| {
            (u_next.values()[k] - u_cur.values()[k]) * inv_dt - nu * lap.values()[k]
                + g.values()[k]
                - phi.values()[k]
        })
        .collect();
    GridField::from_values(grid, values)
}

/// Magnitude of the terms entering `hjb_residual`, for roundoff floors.
fn hjb_term_scale<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_next: &GridField,
    u_cur: &GridField,
    phi: &GridField,
) -> f64 {
    let h = u_next.grid().h();
    (u_next.sup_norm() + u_cur.sup_norm()) / dt
        + 8.0 * nu * u_next.sup_norm() / (h * h)
        + hamiltonian_field(ham, u_next).sup_norm()
        + phi.sup_norm()
}

/// Smallest residual sup-norm that can be resolved in floating point.
pub fn hjb_roundoff_floor<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_next: &GridField,
    u_cur: &GridField,
    phi: &GridField,
) -> f64 {
    32.0 * f64::EPSILON * hjb_term_scale(ham, nu, dt, u_next, u_cur, phi)
}

/// `L_u v = -nu Delta_h v + g_q(x, [D_h u]) . [D_h v]` as a sparse matrix,
/// plus `shift` on the diagonal.
pub fn linearized_matrix<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    shift: f64,
) -> SparseMatrix {
    let grid = u.grid();
    let h = grid.h();
    let inv_h = 1.0 / h;
    let diff = nu / (h * h);
    let grads = hamiltonian_gradients(ham, u);
    let mut a = SparseMatrix::new(grid.len());
    for (k, gq) in grads.iter().enumerate() {
        let (i, j) = grid.coords(k);
        let (i, j) = (i as isize, j as isize);
        let east = grid.index(i + 1, j);
        let west = grid.index(i - 1, j);
        let north = grid.index(i, j + 1);
        let south = grid.index(i, j - 1);
        a.add(k, k, shift + 4.0 * diff + (-gq[0] + gq[1] - gq[2] + gq[3]) * inv_h);
        a.add(k, east, -diff + gq[0] * inv_h);
        a.add(k, west, -diff - gq[1] * inv_h);
        a.add(k, north, -diff + gq[2] * inv_h);
        a.add(k, south, -diff - gq[3] * inv_h);
    }
    a
}

/// Newton Jacobian of `hjb_residual` with respect to `u_next`.
pub fn hjb_jacobian<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_next: &GridField,
) -> SparseMatrix {
    linearized_matrix(ham, nu, u_next, 1.0 / dt)
}

/// Diagnostics of one Bellman step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HjbStepStats {
    pub iterations: usize,
    pub residual: f64,
    pub used_fallback: bool,
}

/// Damped Newton for the Bellman step starting from `guess`.
#[allow(clippy::too_many_arguments)]
pub fn hjb_newton<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_cur: &GridField,
    phi: &GridField,
    guess: GridField,
    cfg: &HjbStepConfig,
    lin: &LinearSolveContract,
) -> Result<(GridField, HjbStepStats)> {
    check_positive("nu", nu)?;
    check_positive("dt", dt)?;
    cfg.validate()?;
    let grid = u_cur.grid();
    grid.check_same(&guess.grid())?;
    let mut u = guess;
    let mut r = hjb_residual(ham, nu, dt, &u, u_cur, phi)?;
    let mut r_norm = r.sup_norm();
    for it in 0..=cfg.max_newton {
        let tol = cfg
            .newton_tol
            .max(hjb_roundoff_floor(ham, nu, dt, &u, u_cur, phi));
        if r_norm <= tol {
            return Ok((
                u,
                HjbStepStats {
                    iterations: it,
                    residual: r_norm,
                    used_fallback: false,
                },
            ));
        }
        if it == cfg.max_newton {
            break;
        }
        let jac = hjb_jacobian(ham, nu, dt, &u);
        let rhs: Vec<f64> = r.values().iter().map(|v| -v).collect();
        let delta = lin.solve(&jac, grid, &rhs)?;
        let mut t = 1.0;
        let mut accepted = None;
        while t >= cfg.min_step {
            let trial = GridField::from_values(
                grid,
                u.values().iter().zip(&delta).map(|(a, d)| a + t * d).collect(),
            )?;
            let rt = hjb_residual(ham, nu, dt, &trial, u_cur, phi)?;
            let rt_norm = rt.sup_norm();
            if rt_norm <= (1.0 - cfg.armijo_c * t) * r_norm {
                accepted = Some((trial, rt, rt_norm));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, rt, rt_norm)) => {
                u = trial;
                r = rt;
                r_norm = rt_norm;
            }
            None => {
                return Err(MfgError::NonConvergence {
                    iterations: it + 1,
                    final_residual: r_norm,
                })
            }
        }
    }
    Err(MfgError::NonConvergence {
        iterations: cfg.max_newton,
        final_residual: r_norm,
    })
}

/// Solves the Bellman step for `u^{n+1}` given `u^n = u_cur` and `Phi_h[m^n] = phi`.
pub fn hjb_step_solve<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_cur: &GridField,
    phi: &GridField,
    cfg: &HjbStepConfig,
) -> Result<GridField> {
    let lin = LinearSolveContract::default();
    hjb_newton(ham, nu, dt, u_cur, phi, u_cur.clone(), cfg, &lin).map(|(u, _)| u)
}

/// Fixed-point iteration with implicit diffusion and lagged Hamiltonian:
/// `(I/dt - nu Delta_h) u_{k+1} = u_cur/dt - g(x, [D_h u_k]) + phi`.
/// Converges when `dt` times the Lipschitz constant of `g` over `h` is small.
#[allow(clippy::too_many_arguments)]
pub fn hjb_picard<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_cur: &GridField,
    phi: &GridField,
    guess: GridField,
    tol: f64,
    max_iter: usize,
) -> Result<(GridField, HjbStepStats)> {
    check_positive("nu", nu)?;
    check_positive("dt", dt)?;
    let grid = u_cur.grid();
    let zero = GridField::zeros(grid);
    let heat = linearized_matrix(&ZeroHamiltonian, nu, &zero, 1.0 / dt);
    let lu = crate::sparse::BandedLu::factor(&heat, grid)?;
    let mut u = guess;
    let mut r_norm = f64::INFINITY;
    for it in 0..max_iter {
        let r = hjb_residual(ham, nu, dt, &u, u_cur, phi)?;
        r_norm = r.sup_norm();
        let floor = hjb_roundoff_floor(ham, nu, dt, &u, u_cur, phi);
        if r_norm <= tol.max(floor) {
            return Ok((
                u,
                HjbStepStats {
                    iterations: it,
                    residual: r_norm,
                    used_fallback: true,
                },
            ));
        }
        let g = hamiltonian_field(ham, &u);
        let rhs: Vec<f64> = (0..grid.len())
            .map(|k| u_cur.values()[k] / dt - g.values()[k] + phi.values()[k])
            .collect();
        u = GridField::from_values(grid, lu.solve(&rhs))?;
        if !u.sup_norm().is_finite() {
            break;
        }
    }
    Err(MfgError::NonConvergence {
        iterations: max_iter,
        final_residual: r_norm,
    })
}

/// Newton from `guess`, then the Picard iteration from `u_cur` if Newton fails.
#[allow(clippy::too_many_arguments)]
pub fn hjb_step_with_fallback<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_cur: &GridField,
    phi: &GridField,
    guess: GridField,
    cfg: &HjbStepConfig,
    lin: &LinearSolveContract,
) -> Result<(GridField, HjbStepStats)> {
    match hjb_newton(ham, nu, dt, u_cur, phi, guess, cfg, lin) {
        Ok(out) => Ok(out),
        Err(err @ MfgError::NonConvergence { .. }) => {
            hjb_picard(ham, nu, dt, u_cur, phi, u_cur.clone(), cfg.newton_tol, 20_000)
                .map_err(|_| err)
        }
        Err(e) => Err(e),
    }
}

struct ZeroHamiltonian;

impl NumericalHamiltonian for ZeroHamiltonian {
    fn value(&self, _node: usize, _q: &QuadArg) -> f64 {
        0.0
    }

    fn grad(&self, _node: usize, _q: &QuadArg) -> [f64; 4] {
        [0.0; 4]
    }
}

/// Transport operator `T(u, m)`, the discrete divergence of `m g_q(x, [D_h u])`.
pub fn transport_apply<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    u: &GridField,
    m: &GridField,
) -> Result<GridField> {
    let grid = u.grid();
    grid.check_same(&m.grid())?;
    let inv_h = 1.0 / grid.h();
    let gr = hamiltonian_gradients(ham, u);
    let mv = m.values();
    let values = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            let (i, j) = (i as isize, j as isize);
            let e = grid.index(i + 1, j);
            let w = grid.index(i - 1, j);
            let n = grid.index(i, j + 1);
            let s = grid.index(i, j - 1);
            let first = mv[k] * gr[k][0] - mv[w] * gr[w][0] + mv[e] * gr[e][1] - mv[k] * gr[k][1];
            let second = mv[k] * gr[k][2] - mv[s] * gr[s][2] + mv[n] * gr[n][3] - mv[k] * gr[k][3];
            (first + second) * inv_h
        })
        .collect();
    GridField::from_values(grid, values)
}

/// Result of one Fokker-Planck step with clamp diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FpStep {
    pub m: GridField,
    /// Largest magnitude of a negative value set to zero.
    pub clamp: f64,
}

/// Sets values in `[-CLAMP_THRESHOLD, 0)` to zero and restores the mass
/// multiplicatively; returns the largest clamped magnitude.
pub fn clamp_density(m: &mut GridField) -> Result<f64> {
    let mass = m.mass();
    let mut worst: f64 = 0.0;
    for (node, v) in m.values_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -CLAMP_THRESHOLD {
                return Err(MfgError::NegativeDensity { node, value: *v });
            }
            worst = worst.max(-*v);
            *v = 0.0;
        }
    }
    if worst > 0.0 {
        let after = m.mass();
        if after > 0.0 {
            let s = mass / after;
            for v in m.values_mut() {
                *v *= s;
            }
        }
    }
    Ok(worst)
}

/// Fokker-Planck step with clamp diagnostics.
pub fn fp_step<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_next: &GridField,
    m_next: &GridField,
    lin: &LinearSolveContract,
) -> Result<FpStep> {
    check_positive("nu", nu)?;
    check_positive("dt", dt)?;
    let grid = u_next.grid();
    grid.check_same(&m_next.grid())?;
    let a = hjb_jacobian(ham, nu, dt, u_next).transpose();
    let rhs: Vec<f64> = m_next.values().iter().map(|v| v / dt).collect();
    let x = lin.solve(&a, grid, &rhs)?;
    let mut m = GridField::from_values(grid, x)?;
    let clamp = clamp_density(&mut m)?;
    Ok(FpStep { m, clamp })
}

/// Solves `m/dt - nu Delta_h m - T(u_next, m) = m_next/dt` for `m = m^n`.
pub fn fp_step_solve<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    dt: f64,
    u_next: &GridField,
    m_next: &GridField,
    lin: &LinearSolveContract,
) -> Result<GridField> {
    fp_step(ham, nu, dt, u_next, m_next, lin).map(|s| s.m)
}

/// `L_u v = -nu Delta_h v + g_q(x, [D_h u]) . [D_h v]`, evaluated pointwise.
pub fn linearized_apply<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    v: &GridField,
) -> GridField {
    let grid = u.grid();
    let lap = laplace5(v);
    let gr = hamiltonian_gradients(ham, u);
    let values = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            let dv = dh_at(v, i, j);
            let adv: f64 = (0..4).map(|l| gr[k][l] * dv[l]).sum();
            -nu * lap.values()[k] + adv
        })
        .collect();
    GridField::from_values(grid, values).expect("grid-sized values")
}

/// `A_u m = -nu Delta_h m - T(u, m)`.
pub fn adjoint_apply<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    m: &GridField,
) -> Result<GridField> {
    let t = transport_apply(ham, u, m)?;
    Ok(laplace5(m).scale(-nu).sub(&t))
}

/// `(|(L_u v, m) - (v, A_u m)|, scale)` where `scale` sums the magnitudes
/// of the products entering both pairings.
pub fn adjoint_discrepancy<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    v: &GridField,
    m: &GridField,
) -> Result<(f64, f64)> {
    let lv = linearized_apply(ham, nu, u, v);
    let am = adjoint_apply(ham, nu, u, m)?;
    let left = inner2(&lv, m);
    let right = inner2(v, &am);
    let scale = inner2(&lv.map(f64::abs), &m.map(f64::abs))
        + inner2(&v.map(f64::abs), &am.map(f64::abs));
    Ok(((left - right).abs(), scale))
}

/// Largest relative discrepancy over `probes` random pairs `(v, m)`.
pub fn adjoint_check<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    u: &GridField,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let grid = u.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = (0..grid.len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let v = GridField::from_values(grid, v)?;
        let m = GridField::from_values(grid, m)?;
        let (d, scale) = adjoint_discrepancy(ham, nu, u, &v, &m)?;
        if scale > 0.0 {
            worst = worst.max(d / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::PowerHamiltonian;
    use std::f64::consts::PI;

    fn ham(grid: TorusGrid, beta: f64, calh: f64) -> PowerHamiltonian {
        PowerHamiltonian::new(beta, GridField::constant(grid, calh)).unwrap()
    }

    #[test]
    fn residual_constant_cases() {
        let grid = TorusGrid::new(8).unwrap();
        let z = GridField::zeros(grid);
        let c = GridField::constant(grid, 3.0);
        let r = hjb_residual(&ham(grid, 2.0, 0.0), 1.0, 0.1, &c, &c, &z).unwrap();
        assert_eq!(r.sup_norm(), 0.0);
        let dt = 0.1;
        let un = GridField::constant(grid, -dt * 2.5);
        let r = hjb_residual(&ham(grid, 2.0, 2.5), 1.0, dt, &un, &z, &z).unwrap();
        assert!(r.sup_norm() < 1e-15);
    }

    #[test]
    fn step_constant_cases() {
        let grid = TorusGrid::new(8).unwrap();
        let h = ham(grid, 2.0, 0.0);
        let cfg = HjbStepConfig::default();
        let z = GridField::zeros(grid);
        let u = hjb_step_solve(&h, 1.0, 0.01, &z, &z, &cfg).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
        let one = GridField::constant(grid, 1.0);
        let u = hjb_step_solve(&h, 1.0, 0.01, &z, &one, &cfg).unwrap();
        assert!(u.values().iter().all(|&v| (v - 0.01).abs() < 1e-14));
    }

    #[test]
    fn transport_of_constant_u_vanishes() {
        let grid = TorusGrid::new(8).unwrap();
        let m = GridField::from_fn(grid, |x, y| 1.0 + (2.0 * PI * x).sin() * y);
        let t = transport_apply(&ham(grid, 2.0, 0.0), &GridField::constant(grid, 2.0), &m).unwrap();
        assert_eq!(t.sup_norm(), 0.0);
    }

    #[test]
    fn fp_constant_case() {
        let grid = TorusGrid::new(8).unwrap();
        let m = fp_step_solve(
            &ham(grid, 2.0, 0.0),
            1.0,
            0.01,
            &GridField::constant(grid, 5.0),
            &GridField::constant(grid, 1.0),
            &LinearSolveContract::default(),
        )
        .unwrap();
        assert!(m.values().iter().all(|&v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn clamp_rules() {
        let grid = TorusGrid::new(2).unwrap();
        let mut m = GridField::from_values(grid, vec![-5e-13, 2.0, 1.0, 1.0 + 5e-13]).unwrap();
        let mass = m.mass();
        let c = clamp_density(&mut m).unwrap();
        assert_eq!(c, 5e-13);
        assert!(m.min() >= 0.0);
        assert!((m.mass() - mass).abs() < 1e-15);
        let mut bad = GridField::from_values(grid, vec![-1e-9, 2.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            clamp_density(&mut bad),
            Err(MfgError::NegativeDensity { node: 0, .. })
        ));
    }

    #[test]
    fn jacobian_is_m_matrix() {
        let grid = TorusGrid::new(6).unwrap();
        let u = GridField::from_fn(grid, |x, y| (2.0 * PI * x).sin() + (2.0 * PI * y).cos());
        let a = hjb_jacobian(&ham(grid, 1.5, 0.0), 0.3, 0.05, &u);
        for r in 0..a.dim() {
            let mut sum = 0.0;
            for &(c, v) in a.row(r) {
                sum += v;
                if c != r {
                    assert!(v <= 0.0);
                } else {
                    assert!(v > 0.0);
                }
            }
            assert!((sum - 20.0).abs() < 1e-9);
        }
    }
}
