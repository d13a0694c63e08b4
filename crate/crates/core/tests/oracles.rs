mod common;

use std::f64::consts::PI;

use common::{dense, dense_fp_step, explicit_picard, sines, smooth_u, to_field};
use nalgebra::DVector;
use torus_mfg::cost::{CostOperator, NonlocalSmoothingCost};
use torus_mfg::dynamics::{
    fp_step_solve, hamiltonian_field, hjb_step_solve, transport_apply, HjbStepConfig,
    LinearSolveContract,
};
use torus_mfg::grid::{dh_at, laplace5};
use torus_mfg::hamiltonian::functional_g;
use torus_mfg::solver::ergodic::{solve_ergodic_report, stationary_density, ErgodicProblem};
use torus_mfg::{
    GridField, LocalCost, PowerHamiltonian, SolverConfig, SpaceTimeField, TimeMesh, TorusGrid,
};

#[test]
fn fp_step_matches_dense_solve() {
    let grid = TorusGrid::new(4).unwrap();
    for beta in [1.5, 2.0, 3.0] {
        let ham = PowerHamiltonian::new(beta, sines(grid, 1.0)).unwrap();
        let (nu, dt) = (0.8, 0.1);
        let u = smooth_u(grid, 0.7);
        let m_next = GridField::from_fn(grid, |x, y| 1.0 + 0.5 * (2.0 * PI * (x - y)).cos());
        let exact = dense_fp_step(&ham, nu, dt, &u, &m_next);
        let got = fp_step_solve(&ham, nu, dt, &u, &m_next, &LinearSolveContract::default()).unwrap();
        assert!(got.sub(&exact).sup_norm() <= 1e-10, "beta {beta}");
    }
}

#[test]
fn hjb_step_matches_explicit_picard() {
    let grid = TorusGrid::new(8).unwrap();
    let (nu, dt) = (0.5, 1e-3);
    for beta in [1.5, 2.0, 3.0] {
        let ham = PowerHamiltonian::new(beta, sines(grid, 1.0)).unwrap();
        let u_cur = smooth_u(grid, 0.3);
        let phi = GridField::from_fn(grid, |x, _| 1.0 + 0.3 * (2.0 * PI * x).cos());
        let u = explicit_picard(&ham, nu, dt, &u_cur, &phi);
        let got = hjb_step_solve(&ham, nu, dt, &u_cur, &phi, &HjbStepConfig::default()).unwrap();
        assert!(got.sub(&u).sup_norm() <= 1e-9, "beta {beta}");
    }
}

#[test]
fn hjb_step_matches_semi_implicit_picard() {
    let grid = TorusGrid::new(8).unwrap();
    let (nu, dt) = (1.0, 0.01);
    let ham = PowerHamiltonian::new(2.0, sines(grid, 1.0)).unwrap();
    let u_cur = smooth_u(grid, 0.2);
    let phi = GridField::constant(grid, 1.0);
    let lu = dense(grid, |v| v.scale(1.0 / dt).sub(&laplace5(v).scale(nu))).lu();
    let mut u = u_cur.clone();
    for _ in 0..1000 {
        let rhs = u_cur.scale(1.0 / dt).sub(&hamiltonian_field(&ham, &u)).add(&phi);
        let next = to_field(grid, &lu.solve(&DVector::from_column_slice(rhs.values())).unwrap());
        let change = next.sub(&u).sup_norm();
        u = next;
        if change < 1e-14 {
            break;
        }
    }
    let got = hjb_step_solve(&ham, nu, dt, &u_cur, &phi, &HjbStepConfig::default()).unwrap();
    assert!(got.sub(&u).sup_norm() <= 1e-9);
}

#[test]
fn stationary_density_spans_dense_kernel() {
    let grid = TorusGrid::new(8).unwrap();
    let ham = PowerHamiltonian::new(2.0, sines(grid, 1.0)).unwrap();
    let nu = 0.6;
    let u = smooth_u(grid, 0.4);
    let a = dense(grid, |m| {
        laplace5(m).scale(-nu).sub(&transport_apply(&ham, &u, m).unwrap())
    });
    let svd = a.svd(false, true);
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .unwrap();
    assert!(*smin < 1e-10);
    let v_t = svd.v_t.unwrap();
    let kernel: Vec<f64> = v_t.row(imin).iter().copied().collect();
    let kernel = GridField::from_values(grid, kernel).unwrap();
    let kernel = kernel.scale(1.0 / kernel.mass());
    let got = stationary_density(&ham, nu, &u, &GridField::constant(grid, 1.0)).unwrap();
    assert!(got.sub(&kernel).sup_norm() <= 1e-10);
    assert!(got.min() > 0.0);
}

#[test]
fn ergodic_zero_hamiltonian_gives_cost_at_one() {
    let grid = TorusGrid::new(8).unwrap();
    for cost in [LocalCost::linear(), LocalCost::power(2.0).unwrap(), LocalCost::power(0.5).unwrap()] {
        let p = ErgodicProblem::new(1.0, PowerHamiltonian::new(2.0, GridField::zeros(grid)).unwrap(), cost.clone())
            .unwrap();
        let sol = solve_ergodic_report(&p, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.lambda - cost.f(1.0)).abs() <= 1e-12);
    }
}

#[test]
fn functional_g_matches_resummation() {
    let grid = TorusGrid::new(4).unwrap();
    let mesh = TimeMesh::new(1.0, 1).unwrap();
    let ham = PowerHamiltonian::new(2.0, sines(grid, 1.0)).unwrap();
    let u1 = smooth_u(grid, 0.5);
    let ut1 = GridField::from_fn(grid, |x, y| (2.0 * PI * y).sin() - 0.3 * (2.0 * PI * x).cos());
    let u = SpaceTimeField::from_slices(mesh, vec![GridField::zeros(grid), u1.clone()]).unwrap();
    let ut = SpaceTimeField::from_slices(mesh, vec![GridField::zeros(grid), ut1.clone()]).unwrap();
    let m = SpaceTimeField::broadcast(mesh, &GridField::constant(grid, 1.0));
    let sign = [-1.0, 1.0, -1.0, 1.0];
    let mut total = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let q = dh_at(&u1, i, j);
            let qt = dh_at(&ut1, i, j);
            let up = |v: [f64; 4]| -> [f64; 4] { std::array::from_fn(|k| (sign[k] * v[k]).max(0.0)) };
            let (p, pt) = (up(q), up(qt));
            let sq = |v: [f64; 4]| v.iter().map(|x| x * x).sum::<f64>();
            let lin: f64 = (0..4).map(|k| sign[k] * 2.0 * p[k] * (qt[k] - q[k])).sum();
            total += sq(pt) - sq(p) - lin;
        }
    }
    let got = functional_g(&ham, &m, &u, &ut).unwrap();
    assert!((got - total).abs() <= 1e-12 * total.abs().max(1.0), "{got} vs {total}");
}

#[test]
fn nonlocal_cost_is_symmetric_positive() {
    let grid = TorusGrid::new(8).unwrap();
    let op = NonlocalSmoothingCost::new(grid);
    let a = dense(grid, |m| op.solve_raw(m).unwrap());
    assert!((&a - a.transpose()).amax() <= 1e-14);
    let eig = a.symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
    let cost = CostOperator::Bilaplacian(op);
    let m = GridField::constant(grid, 1.0);
    assert!(cost.apply(&m).unwrap().sub(&m).sup_norm() <= 1e-14);
}
