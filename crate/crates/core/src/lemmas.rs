//! Sampled verification of the convexity inequalities satisfied by the
//! power-law numerical Hamiltonian and by the Bregman functional built on it.
//!
//! Each check draws random arguments from a seeded ChaCha stream (one stream
//! per check, so adding a check never perturbs the others) and records the
//! worst relative margin `(lhs - rhs) / scale`. A check passes when the worst
//! margin is above `-tolerance`.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{dh_at, norm4, GridField, SpaceTimeField, TimeMesh, TorusGrid};
use crate::hamiltonian::{
    functional_g, power_g, power_g_grad, power_g_hessian, upwind_field, PowerHamiltonian,
    QuadArg, UpwindPart,
};

/// Relative tolerance for every sampled inequality.
pub const LEMMA_TOLERANCE: f64 = 1e-12;
/// Relative tolerance for the finite-difference check of the Hessian formula.
pub const HESSIAN_FD_TOLERANCE: f64 = 1e-4;
/// Hessian-based checks skip `|p|` below this radius.
pub const HESSIAN_EXCLUSION_RADIUS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub lemma_id: String,
    pub samples: usize,
    pub worst_margin: f64,
    /// Worst sample, as a human readable string.
    pub worst_sample: String,
    pub calibrated_constants: BTreeMap<String, f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub beta: f64,
    pub seed: u64,
    pub samples: usize,
    pub lemmas: Vec<LemmaOutcome>,
    pub pass: bool,
}

impl LemmaReport {
    pub fn failures(&self) -> impl Iterator<Item = &LemmaOutcome> {
        self.lemmas.iter().filter(|l| !l.pass)
    }
}

pub(crate) struct Tracker {
    id: &'static str,
    tol: f64,
    samples: usize,
    worst: f64,
    worst_sample: String,
    constants: BTreeMap<String, f64>,
}

impl Tracker {
    pub(crate) fn new(id: &'static str, tol: f64) -> Self {
        Self {
            id,
            tol,
            samples: 0,
            worst: f64::INFINITY,
            worst_sample: String::new(),
            constants: BTreeMap::new(),
        }
    }

    /// Records `lhs >= rhs` at relative scale `scale`.
    pub(crate) fn ge(&mut self, lhs: f64, rhs: f64, scale: f64, describe: impl FnOnce() -> String) {
        self.samples += 1;
        let scale = scale.max(lhs.abs()).max(rhs.abs()).max(f64::MIN_POSITIVE);
        let margin = if lhs >= rhs { (lhs - rhs) / scale } else { -(rhs - lhs) / scale };
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.worst {
            self.worst = margin;
            self.worst_sample = describe();
        }
    }

    pub(crate) fn finish(self) -> LemmaOutcome {
        let worst = if self.samples == 0 { 0.0 } else { self.worst };
        LemmaOutcome {
            lemma_id: self.id.to_string(),
            samples: self.samples,
            worst_margin: worst,
            worst_sample: self.worst_sample,
            calibrated_constants: self.constants,
            pass: worst >= -self.tol,
        }
    }
}

/// `c` for the gradient-difference bound, from the integral representation
/// of `(g_q(q~) - g_q(q)).r`: the two integrals are bounded by
/// `beta |beta - 2| M |dp| |r|` and `beta M |dp| |r|`, and Young's inequality
/// turns `K a b` into `K^2 / (4 eta) a^2 + eta b^2` with `K = beta (beta - 1)`.
pub fn gradient_difference_constant(beta: f64) -> f64 {
    let k = beta * (beta - 1.0);
    0.25 * k * k
}

fn random_component(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    if u < 0.15 {
        return 0.0;
    }
    let mag = 10f64.powf(rng.random_range(-3.0..2.0));
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

fn random_quad(rng: &mut ChaCha8Rng) -> QuadArg {
    QuadArg([
        random_component(rng),
        random_component(rng),
        random_component(rng),
        random_component(rng),
    ])
}

/// Pairs `(q, q~)` mixing independent draws, tiny perturbations and sign flips.
fn random_pair(rng: &mut ChaCha8Rng) -> (QuadArg, QuadArg) {
    let q = random_quad(rng);
    let mode: f64 = rng.random();
    let qt = if mode < 0.6 {
        random_quad(rng)
    } else if mode < 0.8 {
        let eps = 10f64.powf(rng.random_range(-6.0..-1.0));
        QuadArg(q.0.map(|v| v + eps * rng.random_range(-1.0..1.0) * (1.0 + v.abs())))
    } else {
        let c = rng.random_range(0.0..3.0);
        QuadArg(q.0.map(|v| -c * v))
    };
    (q, qt)
}

fn random_positive_p(rng: &mut ChaCha8Rng) -> UpwindPart {
    UpwindPart([0; 4].map(|_: i32| {
        if rng.random::<f64>() < 0.2 {
            0.0
        } else {
            10f64.powf(rng.random_range(-2.0..1.5))
        }
    }))
}

fn min_eigenvalue(m: &[[f64; 4]; 4]) -> (f64, f64) {
    let mat = Matrix4::from_fn(|r, c| m[r][c]);
    let eig = SymmetricEigen::new(mat);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (min, max_abs)
}

fn sub4(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_hessian(beta: f64, samples: usize, seed: u64) -> Vec<LemmaOutcome> {
    let mut rng = stream(seed, 1);
    let mut fd = Tracker::new("hessian_formula", HESSIAN_FD_TOLERANCE);
    let mut psd = if beta >= 2.0 {
        Tracker::new("hessian_lower_bound", LEMMA_TOLERANCE)
    } else {
        Tracker::new("hessian_lower_bound_subquadratic", LEMMA_TOLERANCE)
    };
    let floor = if beta >= 2.0 { 1.0 } else { beta - 1.0 };
    let mut taken = 0;
    while taken < samples {
        let p = random_positive_p(&mut rng);
        let r = p.norm();
        if r < HESSIAN_EXCLUSION_RADIUS {
            continue;
        }
        taken += 1;
        let hess = power_g_hessian(beta, &p);
        let shift = floor * beta * r.powf(beta - 2.0);
        let mut shifted = hess;
        for (k, row) in shifted.iter_mut().enumerate() {
            row[k] -= shift;
        }
        let (lam_min, _) = min_eigenvalue(&shifted);
        let (_, hess_scale) = min_eigenvalue(&hess);
        psd.ge(lam_min, 0.0, hess_scale, || format!("p = {:?}", p.0));

        // central differences of G_p, restricted to the interior of R_+^4
        let step = 1e-6 * r;
        let mut worst_col: f64 = 0.0;
        for l in 0..4 {
            let mut plus = p;
            let mut minus = p;
            plus.0[l] += step;
            minus.0[l] -= step;
            if minus.0[l] < 0.0 {
                minus.0[l] = p.0[l];
            }
            let denom = plus.0[l] - minus.0[l];
            let gp = power_g_grad(beta, &plus);
            let gm = power_g_grad(beta, &minus);
            for k in 0..4 {
                let approx = (gp[k] - gm[k]) / denom;
                worst_col = worst_col.max((approx - hess[k][l]).abs());
            }
        }
        fd.ge(-worst_col, 0.0, hess_scale, || format!("p = {:?}", p.0));
    }
    vec![fd.finish(), psd.finish()]
}

fn check_pointwise(ham: &PowerHamiltonian, samples: usize, seed: u64) -> Vec<LemmaOutcome> {
    let beta = ham.beta();
    let mut rng = stream(seed, 2);
    let mut bregman = Tracker::new("upwind_bregman", LEMMA_TOLERANCE);
    let mut gap_low = Tracker::new("gap_lower_bound", LEMMA_TOLERANCE);
    let mut gap_pow = Tracker::new("gap_power_bound", LEMMA_TOLERANCE);
    let mut gap_sub = Tracker::new("gap_lower_bound_subquadratic", LEMMA_TOLERANCE);
    let mut grad_diff = Tracker::new("gradient_difference", LEMMA_TOLERANCE);
    let c_bound = gradient_difference_constant(beta).max(1.0);
    let mut c_observed: f64 = 0.0;

    for _ in 0..samples {
        let (q, qt) = random_pair(&mut rng);
        let (p, pt) = (q.upwind(), qt.upwind());
        let gap = ham.bregman_gap(&q, &qt);
        let gq = ham.g_grad(&q);
        let dq = sub4(&qt.0, &q.0);
        let term_scale = ham.g_value(0, &qt).abs()
            + ham.g_value(0, &q).abs()
            + dot4(&gq, &dq).abs();

        let gp = power_g_grad(beta, &p);
        let dp = sub4(&pt.0, &p.0);
        let g_breg = power_g(beta, &pt) - power_g(beta, &p) - dot4(&gp, &dp);
        let bregman_scale = term_scale
            + power_g(beta, &pt)
            + power_g(beta, &p)
            + dot4(&gp, &dp).abs();
        bregman.ge(gap, g_breg, bregman_scale, || format!("q = {:?}, q~ = {:?}", q.0, qt.0));

        let dist = p.distance(&pt);
        if beta >= 2.0 {
            let big = p.norm().powf(beta - 2.0).max(pt.norm().powf(beta - 2.0));
            let mid = big * dist * dist / (beta - 1.0);
            let low = dist.powf(beta) / (2f64.powf(beta - 2.0) * (beta - 1.0));
            gap_low.ge(gap, mid, term_scale, || format!("q = {:?}, q~ = {:?}", q.0, qt.0));
            gap_pow.ge(mid, low, mid, || format!("q = {:?}, q~ = {:?}", q.0, qt.0));

            let r = random_quad(&mut rng);
            let eta = 10f64.powf(rng.random_range(-3.0..3.0));
            let gqt = ham.g_grad(&qt);
            let lhs = dot4(&sub4(&gqt, &gq), &r.0).abs();
            let r2 = dot4(&r.0, &r.0);
            let rhs = big * (c_bound / eta * dist * dist + eta * r2);
            let scale = (dot4(&gqt, &r.0).abs() + dot4(&gq, &r.0).abs()).max(rhs);
            grad_diff.ge(rhs, lhs, scale, || {
                format!("q = {:?}, q~ = {:?}, r = {:?}, eta = {eta}", q.0, qt.0, r.0)
            });
            if big > 0.0 && dist > 0.0 {
                let needed = eta * (lhs / big - eta * r2) / (dist * dist);
                c_observed = c_observed.max(needed);
            }
        } else {
            let mut sum = p.0;
            for (s, v) in sum.iter_mut().zip(pt.0) {
                *s += v;
            }
            if sum.iter().all(|&v| v == 0.0) {
                continue;
            }
            let small = p
                .sup_norm()
                .powf(beta - 2.0)
                .min(pt.sup_norm().powf(beta - 2.0));
            let rhs = 2f64.powf(beta - 3.0) * beta * (beta - 1.0) * small * dist * dist;
            gap_sub.ge(gap, rhs, term_scale, || format!("q = {:?}, q~ = {:?}", q.0, qt.0));
        }
    }

    let mut out = vec![bregman.finish()];
    if beta >= 2.0 {
        grad_diff.constants.insert("c_asserted".into(), c_bound);
        grad_diff.constants.insert("c_calibrated".into(), c_observed.max(if beta == 2.0 { 1.0 } else { 0.0 }));
        grad_diff.constants.insert("c_max_required".into(), c_observed);
        let mut grad_diff_out = grad_diff.finish();
        grad_diff_out.pass &= c_observed <= c_bound * (1.0 + LEMMA_TOLERANCE);
        out.extend([gap_low.finish(), gap_pow.finish(), grad_diff_out]);
    } else {
        out.push(gap_sub.finish());
    }
    out
}

fn random_field(rng: &mut ChaCha8Rng, grid: TorusGrid, scale: f64) -> GridField {
    let values = (0..grid.len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    GridField::from_values(grid, values).expect("grid-sized values")
}

fn random_space_time(rng: &mut ChaCha8Rng, mesh: TimeMesh, grid: TorusGrid) -> SpaceTimeField {
    let scale = 10f64.powf(rng.random_range(-2.0..1.0));
    let slices = (0..=mesh.n_steps())
        .map(|_| random_field(rng, grid, scale))
        .collect();
    SpaceTimeField::from_slices(mesh, slices).expect("consistent slices")
}

/// Space-time bounds on the functional `G(m, u, u~)` on small random fields.
fn check_functional(beta: f64, samples: usize, seed: u64) -> Result<Vec<LemmaOutcome>> {
    let grid = TorusGrid::new(4)?;
    let mesh = TimeMesh::new(1.0, 2)?;
    let ham = PowerHamiltonian::new(beta, GridField::zeros(grid))?;
    let mut rng = stream(seed, 3);
    let mut func_low = Tracker::new("functional_lower_bound", LEMMA_TOLERANCE);
    let mut func_pow = Tracker::new("functional_power_bound", LEMMA_TOLERANCE);
    let mut func_grad = Tracker::new("functional_gradient_bound", LEMMA_TOLERANCE);
    let mut rem = [
        Tracker::new("subquadratic_chain_step1", LEMMA_TOLERANCE),
        Tracker::new("subquadratic_chain_step2", LEMMA_TOLERANCE),
        Tracker::new("subquadratic_chain_step3", LEMMA_TOLERANCE),
        Tracker::new("subquadratic_chain_step4", LEMMA_TOLERANCE),
        Tracker::new("subquadratic_chain_step5", LEMMA_TOLERANCE),
    ];

    for s in 0..samples {
        let u = random_space_time(&mut rng, mesh, grid);
        let ut = if s % 4 == 0 {
            let c = rng.random_range(0.0..3.0);
            let slices = u.slices().iter().map(|f| f.scale(-c)).collect();
            SpaceTimeField::from_slices(mesh, slices)?
        } else {
            random_space_time(&mut rng, mesh, grid)
        };
        let m_floor = if rng.random::<f64>() < 0.25 {
            0.0
        } else {
            10f64.powf(rng.random_range(-2.0..0.5))
        };
        let slices = (0..=mesh.n_steps())
            .map(|_| {
                let values = (0..grid.len()).map(|_| m_floor + rng.random_range(0.0..2.0)).collect();
                GridField::from_values(grid, values)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = SpaceTimeField::from_slices(mesh, slices)?;
        let m_min = (0..mesh.n_steps())
            .map(|n| m.slice(n).min())
            .fold(f64::INFINITY, f64::min);
        let describe = || format!("sample {s}");

        if beta >= 2.0 {
            let g = functional_g(&ham, &m, &u, &ut)?;
            let (mut mid, mut low, mut grad_sum) = (0.0, 0.0, 0.0);
            for n in 1..=mesh.n_steps() {
                let p = upwind_field(u.slice(n));
                let pt = upwind_field(ut.slice(n));
                let mw = m.slice(n - 1).values();
                for k in 0..grid.len() {
                    let d = p[k].distance(&pt[k]);
                    let big = p[k].norm().powf(beta - 2.0).max(pt[k].norm().powf(beta - 2.0));
                    mid += mw[k] * big * d * d;
                    low += mw[k] * d.powf(beta);
                    let (i, j) = grid.coords(k);
                    let dq = sub4(&dh_at(ut.slice(n), i, j), &dh_at(u.slice(n), i, j));
                    grad_sum += norm4(&dq).powf(beta);
                }
            }
            mid /= beta - 1.0;
            low /= 2f64.powf(beta - 2.0) * (beta - 1.0);
            func_low.ge(g, mid, g.abs(), describe);
            func_pow.ge(mid, low, mid, describe);
            if m_min > 0.0 {
                let rhs = m_min / (2f64.powf(2.0 * beta - 3.0) * (beta - 1.0)) * grad_sum;
                func_grad.ge(g, rhs, g.abs(), describe);
            }
        } else if m_min > 0.0 {
            let zero = SpaceTimeField::zeros(mesh, grid);
            let g = functional_g(&ham, &m, &zero, &u)?;
            let c1 = 2f64.powf(beta - 3.0) * beta * (beta - 1.0) * m_min;
            let c3 = 2f64.powf(2.0 * beta - 5.0) * beta * (beta - 1.0) * m_min;
            let c4 = 2f64.powf(2.0 * beta - 6.0) * beta * (beta - 1.0) * m_min;
            let mut terms = [0.0f64; 5];
            for n in 1..=mesh.n_steps() {
                let p = upwind_field(u.slice(n));
                for k in 0..grid.len() {
                    let (i, j) = grid.coords(k);
                    let q = dh_at(u.slice(n), i, j);
                    let pk = p[k];
                    let sup = pk.sup_norm();
                    if sup > 0.0 {
                        terms[0] += sup.powf(beta - 2.0) * pk.norm().powi(2);
                    }
                    terms[1] += pk.norm().powf(beta);
                    terms[2] += pk.0.iter().map(|v| v.powf(beta)).sum::<f64>();
                    terms[3] += q.iter().map(|v| v.abs().powf(beta)).sum::<f64>();
                    terms[4] += norm4(&q).powf(beta);
                }
            }
            let chain = [
                g,
                c1 * terms[0],
                c1 * terms[1],
                c3 * terms[2],
                c4 * terms[3],
                c4 * terms[4],
            ];
            for (step, tracker) in rem.iter_mut().enumerate() {
                let (a, b) = (chain[step], chain[step + 1]);
                tracker.ge(a, b, a.abs(), describe);
            }
        }
    }
    Ok(if beta >= 2.0 {
        vec![func_low.finish(), func_pow.finish(), func_grad.finish()]
    } else {
        rem.into_iter().map(Tracker::finish).collect()
    })
}

/// Runs every inequality applicable to `beta` on `samples` random draws each.
pub fn lemma_suite(beta: f64, samples: usize, seed: u64) -> Result<LemmaReport> {
    if samples == 0 {
        return Err(invalid("samples", "at least one sample is required"));
    }
    let grid = TorusGrid::new(1)?;
    let ham = PowerHamiltonian::new(beta, GridField::zeros(grid))?;
    let mut lemmas = check_hessian(beta, samples, seed);
    lemmas.extend(check_pointwise(&ham, samples, seed));
    lemmas.extend(check_functional(beta, samples, seed)?);
    let pass = lemmas.iter().all(|l| l.pass);
    Ok(LemmaReport {
        beta,
        seed,
        samples,
        lemmas,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_case_constant_is_one() {
        assert_eq!(gradient_difference_constant(2.0), 1.0);
    }

    #[test]
    fn equality_case_of_power_bound() {
        // q = 0, q~ = (-1, 1, -1, 1), beta = 2: gap 4 and |p - p~|^2 / (2^0 * 1) = 4
        let ham = PowerHamiltonian::new(2.0, GridField::zeros(TorusGrid::new(1).unwrap())).unwrap();
        let q = QuadArg([0.0; 4]);
        let qt = QuadArg([-1.0, 1.0, -1.0, 1.0]);
        let gap = ham.bregman_gap(&q, &qt);
        let d = q.upwind().distance(&qt.upwind());
        assert_eq!(gap, 4.0);
        assert_eq!(d.powf(2.0), 4.0);
    }

    #[test]
    fn small_suite_passes() {
        for beta in [1.5, 2.0, 3.0] {
            let report = lemma_suite(beta, 200, 11).unwrap();
            for l in &report.lemmas {
                assert!(l.pass, "beta {beta}: {l:?}");
            }
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(lemma_suite(2.0, 0, 1).is_err());
    }
}
