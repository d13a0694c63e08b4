//! Periodic grid on the unit 2-torus and the finite-difference calculus built on it.
//!
//! Grid functions are stored lexicographically: node `(i, j)` lives at index
//! `i * n_side + j`, with `i` running along the first coordinate. Every index
//! pair is wrapped modulo `n_side`, so there are no ghost layers. All sums run
//! sequentially in storage order, which keeps reductions bitwise reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};

/// Uniform `n_side x n_side` grid on the unit torus, step `h = 1 / n_side`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    n_side: usize,
}

impl TorusGrid {
    pub fn new(n_side: usize) -> Result<Self> {
        if n_side == 0 {
            return Err(invalid("n_side", "grid needs at least one node per side"));
        }
        Ok(Self { n_side })
    }

    #[inline]
    pub fn n_side(&self) -> usize {
        self.n_side
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n_side as f64
    }

    /// Number of nodes, `n_side^2`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_side * self.n_side
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n_side == 0
    }

    /// Storage index of the node `(i mod N, j mod N)`.
    #[inline]
    pub fn index(&self, i: isize, j: isize) -> usize {
        let n = self.n_side as isize;
        let i = i.rem_euclid(n) as usize;
        let j = j.rem_euclid(n) as usize;
        i * self.n_side + j
    }

    /// Inverse of [`TorusGrid::index`] on the canonical range.
    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.n_side, k % self.n_side)
    }

    /// Physical position of node `(i, j)` in `[0, 1)^2`.
    #[inline]
    pub fn node_point(&self, i: usize, j: usize) -> (f64, f64) {
        let n = self.n_side as f64;
        (i as f64 / n, j as f64 / n)
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(MfgError::GridMismatch {
                expected: self.n_side,
                found: other.n_side,
            });
        }
        Ok(())
    }
}

/// Real-valued function on the nodes of a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the nodes.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.coords(k);
                let (x1, x2) = grid.node_point(i, j);
                f(x1, x2)
            })
            .collect();
        Self { grid, values }
    }

    /// Builds a field from a function of the (wrapped) node indices.
    pub fn from_index_fn(grid: TorusGrid, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.coords(k);
                f(i, j)
            })
            .collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic access.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: isize, j: isize, value: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// Plain sum over all nodes, in storage order.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `h^2 * sum`, the discrete integral.
    pub fn mass(&self) -> f64 {
        let h = self.grid.h();
        h * h * self.sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Unweighted l^1 norm.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Unweighted l^2 norm.
    pub fn l2_norm(&self) -> f64 {
        inner2(self, self).sqrt()
    }

    /// `(h^2 sum |u|^p)^(1/p)`.
    pub fn weighted_lp_norm(&self, p: f64) -> f64 {
        let h = self.grid.h();
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (h * h * s).powf(1.0 / p)
    }

    /// `(h^2 sum |[D_h u]|^beta)^(1/beta)`, Euclidean norm of the four-stencil.
    pub fn w1_seminorm(&self, beta: f64) -> f64 {
        let h = self.grid.h();
        (h * h * stencil_power_sum(self, beta)).powf(1.0 / beta)
    }
}

/// `sum_{i,j} |[D_h u]_{i,j}|^beta` (unweighted).
pub fn stencil_power_sum(u: &GridField, beta: f64) -> f64 {
    let grid = u.grid();
    (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            let q = dh_at(u, i, j);
            norm4(&q).powf(beta)
        })
        .sum()
}

#[inline]
pub(crate) fn norm4(q: &[f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// `(D_1^+ u)_{i,j} = (u_{i+1,j} - u_{i,j}) / h`.
pub fn d1_plus(u: &GridField) -> GridField {
    let n = u.grid().n_side() as f64;
    GridField::from_index_fn(u.grid(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        (u.at(i + 1, j) - u.at(i, j)) * n
    })
}

/// `(D_2^+ u)_{i,j} = (u_{i,j+1} - u_{i,j}) / h`.
pub fn d2_plus(u: &GridField) -> GridField {
    let n = u.grid().n_side() as f64;
    GridField::from_index_fn(u.grid(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        (u.at(i, j + 1) - u.at(i, j)) * n
    })
}

/// The four one-sided differences at node `(i, j)`:
/// `((D1+ u)_{i,j}, (D1+ u)_{i-1,j}, (D2+ u)_{i,j}, (D2+ u)_{i,j-1})`.
#[inline]
pub fn dh_at(u: &GridField, i: usize, j: usize) -> [f64; 4] {
    let n = u.grid().n_side() as f64;
    let (i, j) = (i as isize, j as isize);
    let c = u.at(i, j);
    [
        (u.at(i + 1, j) - c) * n,
        (c - u.at(i - 1, j)) * n,
        (u.at(i, j + 1) - c) * n,
        (c - u.at(i, j - 1)) * n,
    ]
}

/// One 4-vector per node, the stencil `[D_h u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourVectorField {
    grid: TorusGrid,
    values: Vec<[f64; 4]>,
}

impl FourVectorField {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[[f64; 4]] {
        &self.values
    }

    pub fn at(&self, i: isize, j: isize) -> [f64; 4] {
        self.values[self.grid.index(i, j)]
    }
}

pub fn dh_stencil(u: &GridField) -> FourVectorField {
    let grid = u.grid();
    let values = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            dh_at(u, i, j)
        })
        .collect();
    FourVectorField { grid, values }
}

/// Five-point Laplacian `-(4u - u_E - u_W - u_N - u_S) / h^2`.
pub fn laplace5(u: &GridField) -> GridField {
    let n = u.grid().n_side() as f64;
    let inv_h2 = n * n;
    GridField::from_index_fn(u.grid(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        -(4.0 * u.at(i, j) - u.at(i + 1, j) - u.at(i - 1, j) - u.at(i, j + 1) - u.at(i, j - 1))
            * inv_h2
    })
}

/// Unweighted pairing `sum_{i,j} u_{i,j} v_{i,j}`.
pub fn inner2(u: &GridField, v: &GridField) -> f64 {
    assert_eq!(u.grid(), v.grid(), "inner2: grid mismatch");
    u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum()
}

const GAUSS3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Mean of `density` over the `h x h` cell centred at each node, by 3x3
/// tensor Gauss-Legendre quadrature.
pub fn cell_average(density: impl Fn(f64, f64) -> f64, grid: TorusGrid) -> GridField {
    let half = 0.5 * grid.h();
    GridField::from_fn(grid, |x1, x2| {
        let mut acc = 0.0;
        for (a, wa) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
            for (b, wb) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
                acc += wa * wb * density(x1 + a * half, x2 + b * half);
            }
        }
        // weights sum to 2 per direction
        acc / 4.0
    })
}

/// Tensor-product linear interpolation with periodic wrap.
pub fn bilinear_interp(u: &GridField, x: (f64, f64)) -> f64 {
    let n = u.grid().n_side() as f64;
    let s1 = x.0.rem_euclid(1.0) * n;
    let s2 = x.1.rem_euclid(1.0) * n;
    let i0 = s1.floor();
    let j0 = s2.floor();
    let t1 = s1 - i0;
    let t2 = s2 - j0;
    let (i0, j0) = (i0 as isize, j0 as isize);
    (1.0 - t1) * (1.0 - t2) * u.at(i0, j0)
        + t1 * (1.0 - t2) * u.at(i0 + 1, j0)
        + (1.0 - t1) * t2 * u.at(i0, j0 + 1)
        + t1 * t2 * u.at(i0 + 1, j0 + 1)
}

/// Injection of a fine-grid field onto a coarser nested grid.
pub fn restrict(u_fine: &GridField, coarse: TorusGrid) -> Result<GridField> {
    let nf = u_fine.grid().n_side();
    let nc = coarse.n_side();
    if nc > nf || !nf.is_multiple_of(nc) {
        return Err(MfgError::NonNestedGrids {
            fine: nf,
            coarse: nc,
        });
    }
    let r = nf / nc;
    Ok(GridField::from_index_fn(coarse, |i, j| {
        u_fine.at((r * i) as isize, (r * j) as isize)
    }))
}

/// Uniform time mesh `t_n = n * dt`, `dt = T / N_T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    horizon: f64,
    n_steps: usize,
}

impl TimeMesh {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", format!("T must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "N_T must be positive"));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.n_steps as f64
    }
}

/// `N_T + 1` grid functions on a shared grid, slice `n` at `t_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    mesh: TimeMesh,
    slices: Vec<GridField>,
}

impl SpaceTimeField {
    pub fn zeros(mesh: TimeMesh, grid: TorusGrid) -> Self {
        Self {
            mesh,
            slices: vec![GridField::zeros(grid); mesh.n_steps() + 1],
        }
    }

    /// Same field at every time level.
    pub fn broadcast(mesh: TimeMesh, field: &GridField) -> Self {
        Self {
            mesh,
            slices: vec![field.clone(); mesh.n_steps() + 1],
        }
    }

    pub fn from_slices(mesh: TimeMesh, slices: Vec<GridField>) -> Result<Self> {
        if slices.len() != mesh.n_steps() + 1 {
            return Err(MfgError::MeshMismatch(format!(
                "expected {} slices, got {}",
                mesh.n_steps() + 1,
                slices.len()
            )));
        }
        let grid = slices[0].grid();
        for s in &slices[1..] {
            grid.check_same(&s.grid())?;
        }
        Ok(Self { mesh, slices })
    }

    pub fn mesh(&self) -> TimeMesh {
        self.mesh
    }

    pub fn grid(&self) -> TorusGrid {
        self.slices[0].grid()
    }

    pub fn slices(&self) -> &[GridField] {
        &self.slices
    }

    pub fn slice(&self, n: usize) -> &GridField {
        &self.slices[n]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut GridField {
        &mut self.slices[n]
    }

    pub fn into_slices(self) -> Vec<GridField> {
        self.slices
    }

    pub(crate) fn check_compatible(&self, other: &SpaceTimeField) -> Result<()> {
        if self.mesh != other.mesh {
            return Err(MfgError::MeshMismatch(format!(
                "{:?} vs {:?}",
                self.mesh, other.mesh
            )));
        }
        self.grid().check_same(&other.grid())
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().fold(0.0, |acc, s| acc.max(s.sup_norm()))
    }

    pub fn min(&self) -> f64 {
        self.slices.iter().fold(f64::INFINITY, |acc, s| acc.min(s.min()))
    }

    pub fn sub(&self, other: &SpaceTimeField) -> SpaceTimeField {
        SpaceTimeField {
            mesh: self.mesh,
            slices: self
                .slices
                .iter()
                .zip(&other.slices)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    /// Trilinear interpolation: bilinear in space, linear in time.
    pub fn interp(&self, t: f64, x: (f64, f64)) -> f64 {
        let s = (t / self.mesh.dt()).clamp(0.0, self.mesh.n_steps() as f64);
        let n0 = (s.floor() as usize).min(self.mesh.n_steps().saturating_sub(1));
        let w = s - n0 as f64;
        (1.0 - w) * bilinear_interp(&self.slices[n0], x)
            + w * bilinear_interp(&self.slices[n0 + 1], x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spike(n: usize) -> GridField {
        let g = TorusGrid::new(n).unwrap();
        let mut u = GridField::zeros(g);
        u.set(0, 0, 1.0);
        u
    }

    #[test]
    fn index_wraps() {
        let g = TorusGrid::new(4).unwrap();
        assert_eq!(g.index(-1, 0), g.index(3, 0));
        assert_eq!(g.index(5, -6), g.index(1, 2));
        assert_eq!(g.h() * g.n_side() as f64, 1.0);
    }

    #[test]
    fn d1_plus_of_constant_is_zero() {
        let g = TorusGrid::new(5).unwrap();
        let u = GridField::constant(g, 5.0);
        assert!(d1_plus(&u).values().iter().all(|&v| v == 0.0));
        assert!(d2_plus(&u).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn d1_plus_spike() {
        let d = d1_plus(&spike(4));
        assert_eq!(d.at(3, 0), 4.0);
        assert_eq!(d.at(0, 0), -4.0);
        assert_eq!(d.at(1, 0), 0.0);
        assert_eq!(d.at(2, 0), 0.0);
    }

    #[test]
    fn d1_plus_sawtooth_wrap() {
        let g = TorusGrid::new(6).unwrap();
        let u = GridField::from_index_fn(g, |i, _| i as f64 * g.h());
        let d = d1_plus(&u);
        for i in 0..6 {
            let expect = if i < 5 { 1.0 } else { 1.0 - 6.0 };
            assert!((d.at(i, 2) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_at_spike() {
        let s = dh_stencil(&spike(4));
        assert_eq!(s.at(0, 0), [-4.0, 4.0, -4.0, 4.0]);
    }

    #[test]
    fn stencil_component_order() {
        let g = TorusGrid::new(4).unwrap();
        let u = GridField::from_index_fn(g, |_, j| j as f64 * g.h());
        let s = dh_stencil(&u);
        for k in 0..g.len() {
            let (i, j) = g.coords(k);
            let q = s.at(i as isize, j as isize);
            assert_eq!(q[0], 0.0);
            assert_eq!(q[1], 0.0);
            let fwd = if j < 3 { 1.0 } else { -3.0 };
            let bwd = if j > 0 { 1.0 } else { -3.0 };
            assert!((q[2] - fwd).abs() < 1e-12);
            assert!((q[3] - bwd).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_spike() {
        let l = laplace5(&spike(4));
        assert_eq!(l.at(0, 0), -64.0);
        for (i, j) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            assert_eq!(l.at(i, j), 16.0);
        }
        assert_eq!(l.at(2, 2), 0.0);
        assert_eq!(l.at(1, 1), 0.0);
        assert_eq!(l.sum(), 0.0);
    }

    #[test]
    fn inner2_small() {
        let g = TorusGrid::new(2).unwrap();
        let u = GridField::from_values(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = GridField::constant(g, 1.0);
        assert_eq!(inner2(&u, &v), 10.0);
    }

    #[test]
    fn cell_average_of_constant_and_sine() {
        let g = TorusGrid::new(8).unwrap();
        let one = cell_average(|_, _| 1.0, g);
        assert!(one.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let tp = std::f64::consts::TAU;
        let m = cell_average(|x, _| 1.0 + 0.5 * (tp * x).sin(), g);
        let h = g.h();
        for k in 0..g.len() {
            let (i, _) = g.coords(k);
            let x = i as f64 * h;
            // exact mean of sin over [x - h/2, x + h/2]
            let exact = 1.0
                + 0.5 * ((tp * (x - h / 2.0)).cos() - (tp * (x + h / 2.0)).cos()) / (tp * h);
            assert!((m.values()[k] - exact).abs() < 1e-7, "{k}");
        }
        assert!((m.mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bilinear_spike_centre() {
        let u = spike(4);
        assert!((bilinear_interp(&u, (0.125, 0.125)) - 0.25).abs() < 1e-15);
        assert_eq!(bilinear_interp(&u, (0.0, 0.0)), 1.0);
        assert_eq!(bilinear_interp(&u, (1.0, 1.0)), 1.0);
    }

    #[test]
    fn restrict_reads_coinciding_nodes() {
        let fine = TorusGrid::new(8).unwrap();
        let coarse = TorusGrid::new(4).unwrap();
        let u = GridField::from_index_fn(fine, |i, j| (10 * i + j) as f64);
        let r = restrict(&u, coarse).unwrap();
        assert_eq!(r.at(1, 1), u.at(2, 2));
        assert_eq!(restrict(&u, fine).unwrap(), u);
        assert!(matches!(
            restrict(&u, TorusGrid::new(3).unwrap()),
            Err(MfgError::NonNestedGrids { .. })
        ));
    }

    #[test]
    fn space_time_interp_is_linear_in_time() {
        let g = TorusGrid::new(4).unwrap();
        let mesh = TimeMesh::new(1.0, 2).unwrap();
        let f = SpaceTimeField::from_slices(
            mesh,
            vec![
                GridField::constant(g, 0.0),
                GridField::constant(g, 1.0),
                GridField::constant(g, 4.0),
            ],
        )
        .unwrap();
        assert!((f.interp(0.25, (0.3, 0.7)) - 0.5).abs() < 1e-15);
        assert!((f.interp(0.75, (0.1, 0.2)) - 2.5).abs() < 1e-15);
        assert_eq!(f.interp(1.0, (0.0, 0.0)), 4.0);
    }
}
