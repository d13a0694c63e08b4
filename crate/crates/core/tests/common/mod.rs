#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use torus_mfg::dynamics::{hamiltonian_field, transport_apply};
use torus_mfg::grid::laplace5;
use torus_mfg::{GridField, PowerHamiltonian, RunConfig, TorusGrid};

pub const BILAPLACIAN: &str = "kind = \"bilaplacian\"";
pub const SQUARE: &str = "kind = \"local\"\n[cost.local]\npreset = \"power\"\nalpha = 2.0";

/// `beta = 2`, `nu = 0.6`, sines `calH`, cosine `u0`, bump `mT`, `T = 1`.
pub fn smooth_preset(cost: &str, n_side: usize, n_steps: usize) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        r#"
[problem]
kind = "evolutive"
nu = 0.6
beta = 2.0
n_side = {n_side}
n_steps = {n_steps}
[problem.hamiltonian]
preset = "sines"
amplitude = 1.0
[problem.u0]
preset = "cosine"
amplitude = 0.5
[problem.m_terminal]
preset = "bump"
[cost]
{cost}
"#
    ))
    .unwrap()
}

/// Zero `calH`, `F(m) = m`, `u0 = 0`, uniform `mT`, `beta = 2`, `nu = 1`, `T = 1`.
pub fn uniform_preset(n_side: usize, n_steps: usize) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        r#"
[problem]
kind = "evolutive"
nu = 1.0
beta = 2.0
n_side = {n_side}
n_steps = {n_steps}
[cost]
kind = "local"
[cost.local]
preset = "linear"
"#
    ))
    .unwrap()
}

pub fn ergodic_preset(hamiltonian: &str, n_side: usize) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        r#"
[problem]
kind = "ergodic"
nu = 0.6
beta = 2.0
n_side = {n_side}
[problem.hamiltonian]
preset = "{hamiltonian}"
[cost]
kind = "local"
[cost.local]
preset = "linear"
"#
    ))
    .unwrap()
}

pub fn basis(grid: TorusGrid, k: usize) -> GridField {
    let mut e = GridField::zeros(grid);
    e.values_mut()[k] = 1.0;
    e
}

/// Dense matrix of a linear grid operator, column by column.
pub fn dense(grid: TorusGrid, op: impl Fn(&GridField) -> GridField) -> DMatrix<f64> {
    let n = grid.len();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let col = op(&basis(grid, k));
        for (r, v) in col.values().iter().enumerate() {
            a[(r, k)] = *v;
        }
    }
    a
}

pub fn to_field(grid: TorusGrid, v: &DVector<f64>) -> GridField {
    GridField::from_values(grid, v.iter().copied().collect()).unwrap()
}

pub fn sines(grid: TorusGrid, a: f64) -> GridField {
    GridField::from_fn(grid, |x, y| a * (2.0 * PI * x).sin() * (2.0 * PI * y).sin())
}

pub fn smooth_u(grid: TorusGrid, a: f64) -> GridField {
    GridField::from_fn(grid, |x, y| a * ((2.0 * PI * x).cos() + 0.5 * (2.0 * PI * (x + 2.0 * y)).sin()))
}

/// Dense direct solve of `m/dt - nu Delta_h m - T(u, m) = m_next/dt`.
pub fn dense_fp_step(
    ham: &PowerHamiltonian,
    nu: f64,
    dt: f64,
    u: &GridField,
    m_next: &GridField,
) -> GridField {
    let grid = u.grid();
    let a = dense(grid, |m| {
        let t = transport_apply(ham, u, m).unwrap();
        m.scale(1.0 / dt).sub(&laplace5(m).scale(nu)).sub(&t)
    });
    let rhs = DVector::from_iterator(grid.len(), m_next.values().iter().map(|v| v / dt));
    to_field(grid, &a.lu().solve(&rhs).unwrap())
}

/// Fixed point of `u <- u_cur + dt (nu Delta_h u - g(D_h u) + phi)`, a
/// contraction when `dt (8 nu / h^2 + Lip g)` is below one.
pub fn explicit_picard(
    ham: &PowerHamiltonian,
    nu: f64,
    dt: f64,
    u_cur: &GridField,
    phi: &GridField,
) -> GridField {
    let mut u = u_cur.clone();
    for _ in 0..10_000 {
        let rate = laplace5(&u).scale(nu).sub(&hamiltonian_field(ham, &u)).add(phi);
        let next = u_cur.add(&rate.scale(dt));
        let change = next.sub(&u).sup_norm();
        u = next;
        if change < 1e-15 {
            break;
        }
    }
    u
}
