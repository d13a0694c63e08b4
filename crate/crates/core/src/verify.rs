//! Seeded suites for the energy identity and the adjoint structure, reported
//! in the same per-check format as the lemma suite.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostOperator, LocalCost, NonlocalSmoothingCost};
use crate::dynamics::adjoint_check;
use crate::error::{invalid, Result};
use crate::grid::{GridField, SpaceTimeField, TimeMesh, TorusGrid};
use crate::hamiltonian::{NumericalHamiltonian, PowerHamiltonian};
use crate::lemmas::{stream, LemmaOutcome, Tracker};
use crate::solver::identity::{identity_terms, PerturbationPair};

pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const ADJOINT_TOLERANCE: f64 = 1e-12;
pub const IDENTITY_SIDE: usize = 8;
pub const IDENTITY_STEPS: usize = 5;
pub const ADJOINT_SIDES: [usize; 3] = [4, 8, 16];
/// Diffusion used by both suites.
pub const SUITE_NU: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub beta: f64,
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<LemmaOutcome>,
    pub pass: bool,
}

impl SuiteReport {
    fn new(suite: &str, beta: f64, seed: u64, samples: usize, checks: Vec<LemmaOutcome>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            suite: suite.to_string(),
            beta,
            seed,
            samples,
            checks,
            pass,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &LemmaOutcome> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn random_field(rng: &mut impl Rng, grid: TorusGrid, lo: f64, hi: f64) -> Result<GridField> {
    let values = (0..grid.len()).map(|_| rng.random_range(lo..hi)).collect();
    GridField::from_values(grid, values)
}

fn random_trajectory(
    rng: &mut impl Rng,
    mesh: TimeMesh,
    grid: TorusGrid,
    lo: f64,
    hi: f64,
) -> Result<SpaceTimeField> {
    let slices = (0..=mesh.n_steps())
        .map(|_| random_field(rng, grid, lo, hi))
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::from_slices(mesh, slices)
}

/// The Hamiltonian used by the default suites: `calH = sin(2 pi x1) sin(2 pi x2)`.
pub fn suite_hamiltonian(beta: f64, grid: TorusGrid) -> Result<PowerHamiltonian> {
    let calh = GridField::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
    PowerHamiltonian::new(beta, calh)
}

/// Draws `samples` random pairs of trajectories, alternating between the
/// linear local cost and the bilaplacian cost. The tilde pair carries its own
/// residuals as perturbation. Checks the identity and the sign of its three
/// middle groups, which are nonnegative for a convex `g` and a monotone cost.
pub fn identity_suite_with<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    nu: f64,
    mesh: TimeMesh,
    grid: TorusGrid,
    samples: usize,
    seed: u64,
) -> Result<Vec<LemmaOutcome>> {
    if samples == 0 {
        return Err(invalid("samples", "at least one sample is required"));
    }
    let costs = [
        ("local", CostOperator::Local(LocalCost::linear())),
        ("bilaplacian", CostOperator::Bilaplacian(NonlocalSmoothingCost::new(grid))),
    ];
    let mut identity = Tracker::new("fundamental_identity", IDENTITY_TOLERANCE);
    let mut forward = Tracker::new("bregman_forward_nonnegative", IDENTITY_TOLERANCE);
    let mut backward = Tracker::new("bregman_backward_nonnegative", IDENTITY_TOLERANCE);
    let mut pairing = Tracker::new("cost_pairing_nonnegative", IDENTITY_TOLERANCE);
    let mut rng = stream(seed, 101);
    for s in 0..samples {
        let (name, cost) = &costs[s % 2];
        let u = random_trajectory(&mut rng, mesh, grid, -1.0, 1.0)?;
        let ut = random_trajectory(&mut rng, mesh, grid, -1.0, 1.0)?;
        let m = random_trajectory(&mut rng, mesh, grid, 0.0, 2.0)?;
        let mt = random_trajectory(&mut rng, mesh, grid, 0.0, 2.0)?;
        let pert = PerturbationPair::of(ham, nu, cost, &ut, &mt)?;
        let t = identity_terms(ham, nu, cost, (&u, &m), (&ut, &mt), &pert)?;
        let describe = || format!("sample {s} ({name} cost, seed {seed})");
        identity.ge(0.0, t.gap, t.scale, describe);
        forward.ge(t.g_forward, 0.0, t.scale, describe);
        backward.ge(t.g_backward, 0.0, t.scale, describe);
        pairing.ge(t.cost_pairing, 0.0, t.scale, describe);
    }
    Ok(vec![identity.finish(), forward.finish(), backward.finish(), pairing.finish()])
}

/// Identity suite on `N_h = 8`, `N_T = 5`, `T = 1`.
pub fn identity_suite(beta: f64, samples: usize, seed: u64) -> Result<SuiteReport> {
    let grid = TorusGrid::new(IDENTITY_SIDE)?;
    let mesh = TimeMesh::new(1.0, IDENTITY_STEPS)?;
    let ham = suite_hamiltonian(beta, grid)?;
    let checks = identity_suite_with(&ham, SUITE_NU, mesh, grid, samples, seed)?;
    Ok(SuiteReport::new("identity", beta, seed, samples, checks))
}

/// `(L_u v, m) = (v, A_u m)` over `probes` random pairs at random `u`, for
/// each grid side in `ADJOINT_SIDES`.
pub fn adjoint_suite(beta: f64, probes: usize, seed: u64) -> Result<SuiteReport> {
    if probes == 0 {
        return Err(invalid("samples", "at least one probe is required"));
    }
    let mut rng = stream(seed, 202);
    let mut checks = Vec::new();
    for (id, n) in ["adjoint_structure_n4", "adjoint_structure_n8", "adjoint_structure_n16"]
        .into_iter()
        .zip(ADJOINT_SIDES)
    {
        let grid = TorusGrid::new(n)?;
        let ham = suite_hamiltonian(beta, grid)?;
        let u = random_field(&mut rng, grid, -1.0, 1.0)?;
        let probe_seed = rng.random::<u64>();
        let worst = adjoint_check(&ham, SUITE_NU, &u, probes, probe_seed)?;
        let mut t = Tracker::new(id, ADJOINT_TOLERANCE);
        t.ge(0.0, worst, 1.0, || format!("N_h = {n}, probe seed {probe_seed}"));
        let mut out = t.finish();
        out.samples = probes;
        checks.push(out);
    }
    Ok(SuiteReport::new("adjoint", beta, seed, probes, checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_samples() {
        for beta in [1.5, 2.0, 3.0] {
            let r = identity_suite(beta, 20, 5).unwrap();
            assert!(r.pass, "{r:?}");
            let r = adjoint_suite(beta, 20, 5).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn suites_are_deterministic() {
        assert_eq!(identity_suite(2.0, 6, 9).unwrap(), identity_suite(2.0, 6, 9).unwrap());
        assert_eq!(adjoint_suite(2.0, 6, 9).unwrap(), adjoint_suite(2.0, 6, 9).unwrap());
    }
}
