mod common;

use common::{smooth_preset, BILAPLACIAN};
use torus_mfg::cost::CostOperator;
use torus_mfg::hamiltonian::QuadArg;
use torus_mfg::solver::evolutive::solve_evolutive_report;
use torus_mfg::solver::identity::{identity_terms, PerturbationPair};
use torus_mfg::verify::{
    identity_suite, identity_suite_with, suite_hamiltonian, IDENTITY_TOLERANCE, SUITE_NU,
};
use torus_mfg::{
    GridField, NumericalHamiltonian, PowerHamiltonian, SolverConfig, SpaceTimeField,
    TimeMesh, TorusGrid,
};

/// `g` with the sign of its gradient flipped.
struct SignFlipped(PowerHamiltonian);

impl NumericalHamiltonian for SignFlipped {
    fn value(&self, node: usize, q: &QuadArg) -> f64 {
        self.0.value(node, q)
    }

    fn grad(&self, node: usize, q: &QuadArg) -> [f64; 4] {
        self.0.grad(node, q).map(|v| -v)
    }
}

#[test]
fn identity_holds_on_random_pairs() {
    for beta in [1.5, 2.0, 3.0] {
        let report = identity_suite(beta, 100, 2024).unwrap();
        for c in &report.checks {
            assert!(c.pass, "beta {beta}: {c:?}");
            assert_eq!(c.samples, 100);
        }
    }
}

#[test]
fn sign_flipped_gradient_is_caught() {
    let grid = TorusGrid::new(8).unwrap();
    let mesh = TimeMesh::new(1.0, 5).unwrap();
    let ham = SignFlipped(suite_hamiltonian(2.0, grid).unwrap());
    let checks = identity_suite_with(&ham, SUITE_NU, mesh, grid, 100, 2024).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.lemma_id.as_str()).collect();
    assert!(failed.contains(&"bregman_forward_nonnegative"), "{checks:?}");
    assert!(failed.contains(&"bregman_backward_nonnegative"), "{checks:?}");
}

#[test]
fn middle_terms_are_nonnegative_against_a_solution() {
    let cfg = smooth_preset(BILAPLACIAN, 8, 8);
    let p = cfg.evolutive().unwrap();
    let sol = solve_evolutive_report(&p, &SolverConfig::default()).unwrap();
    assert!(sol.converged);
    let mesh = p.mesh;
    let grid = p.grid();
    // A perturbed competitor: the solution with a smooth bump added to u and
    // m transported toward uniform.
    let ut = SpaceTimeField::from_slices(
        mesh,
        sol.u
            .slices()
            .iter()
            .enumerate()
            .map(|(n, s)| {
                s.add(&GridField::from_fn(grid, |x, y| 0.1 * n as f64 * (x - y).sin()))
            })
            .collect(),
    )
    .unwrap();
    let mt = SpaceTimeField::from_slices(
        mesh,
        sol.m.slices().iter().map(|s| s.map(|v| 0.5 * v + 0.5)).collect(),
    )
    .unwrap();
    let cost = &p.cost;
    let pert = PerturbationPair::of(&p.hamiltonian, p.nu, cost, &ut, &mt).unwrap();
    let t = identity_terms(&p.hamiltonian, p.nu, cost, (&sol.u, &sol.m), (&ut, &mt), &pert).unwrap();
    assert!(t.gap <= IDENTITY_TOLERANCE * t.scale, "{t:?}");
    for v in [t.g_forward, t.g_backward, t.cost_pairing] {
        assert!(v >= -IDENTITY_TOLERANCE * t.scale, "{t:?}");
    }
    // The solution's own residuals are at solver tolerance.
    let own = PerturbationPair::of(&p.hamiltonian, p.nu, cost, &sol.u, &sol.m).unwrap();
    assert!(own.a.sup_norm() <= 1e-9 && own.b.sup_norm() <= 1e-9);
    assert!(matches!(cost, CostOperator::Bilaplacian(_)));
}
