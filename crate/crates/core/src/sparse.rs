//! Sparse matrices on torus grids and a banded direct solver.
//!
//! Lexicographic order couples node `(0, j)` with `(N-1, j)`, which gives a
//! bandwidth of `N^2 - N`. Visiting the grid rows in the folded order
//! `0, N-1, 1, N-2, ...` places every pair of neighbouring rows at most two
//! slots apart, so the permuted five-point pattern has half-bandwidth `2N`.
//! LU without pivoting is applied to the permuted band; it is stable for the
//! diagonally dominant M-matrices assembled by the scheme.
//!
//! One column (the last one in permuted order) may be dense. The ergodic
//! Newton system uses it to carry the unknown effective constant.

use crate::error::{MfgError, Result};
use crate::grid::TorusGrid;

/// Row-oriented sparse matrix with merged duplicate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `value` to entry `(r, c)`.
    pub fn add(&mut self, r: usize, c: usize, value: f64) {
        let row = &mut self.rows[r];
        match row.iter_mut().find(|(col, _)| *col == c) {
            Some(entry) => entry.1 += value,
            None => row.push((c, value)),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r]
            .iter()
            .find(|(col, _)| *col == c)
            .map_or(0.0, |e| e.1)
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    /// Overwrites column `c` with `values`.
    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        for (r, row) in self.rows.iter_mut().enumerate() {
            row.retain(|(col, _)| *col != c);
            if values[r] != 0.0 {
                row.push((c, values[r]));
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t = SparseMatrix::new(self.n);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                t.rows[c].push((r, v));
            }
        }
        t
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                d[r][c] += v;
            }
        }
        d
    }

    /// Adds `shift` to every diagonal entry.
    pub fn shift_diagonal(&mut self, shift: f64) {
        for r in 0..self.n {
            self.add(r, r, shift);
        }
    }
}

/// Folded-row ordering of a torus grid; maps storage index to band position.
#[derive(Clone, Debug)]
pub struct FoldOrdering {
    to_pos: Vec<usize>,
    to_index: Vec<usize>,
    half_bandwidth: usize,
}

impl FoldOrdering {
    pub fn new(grid: TorusGrid) -> Self {
        let n = grid.n_side();
        let mut rank = vec![0usize; n];
        let (mut lo, mut hi, mut next) = (0usize, n - 1, 0usize);
        while lo <= hi {
            rank[lo] = next;
            next += 1;
            if hi != lo {
                rank[hi] = next;
                next += 1;
            }
            lo += 1;
            if hi == 0 {
                break;
            }
            hi -= 1;
        }
        let mut to_pos = vec![0; grid.len()];
        let mut to_index = vec![0; grid.len()];
        for k in 0..grid.len() {
            let (i, j) = grid.coords(k);
            let p = rank[i] * n + j;
            to_pos[k] = p;
            to_index[p] = k;
        }
        Self {
            to_pos,
            to_index,
            half_bandwidth: (2 * n).min(grid.len().saturating_sub(1)),
        }
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bandwidth
    }

    pub fn position(&self, k: usize) -> usize {
        self.to_pos[k]
    }

    /// Storage index of the unknown placed last in band order.
    pub fn last_unknown(&self) -> usize {
        self.to_index[self.to_index.len() - 1]
    }
}

/// LU factors of a permuted band matrix with an optional dense last column.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    band: Vec<f64>,
    last: Vec<f64>,
    ordering: FoldOrdering,
}

impl BandedLu {
    /// Factors `a`, whose unknowns are indexed like the nodes of `grid`.
    pub fn factor(a: &SparseMatrix, grid: TorusGrid) -> Result<Self> {
        let ordering = FoldOrdering::new(grid);
        let n = a.dim();
        if n != grid.len() {
            return Err(MfgError::LinearSolve(format!(
                "matrix of order {n} does not match a grid with {} nodes",
                grid.len()
            )));
        }
        let kl = ordering.half_bandwidth();
        let ku = kl;
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let mut last = vec![0.0; n];
        for r in 0..n {
            let pr = ordering.position(r);
            for &(c, v) in a.row(r) {
                let pc = ordering.position(c);
                if pc == n - 1 {
                    last[pr] += v;
                } else {
                    let off = pc as isize - pr as isize;
                    if off < -(kl as isize) || off > ku as isize {
                        return Err(MfgError::LinearSolve(format!(
                            "entry ({r}, {c}) lies outside the band"
                        )));
                    }
                    band[pr * width + (off + kl as isize) as usize] += v;
                }
            }
        }

        let scale = band
            .iter()
            .chain(&last)
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tiny = 64.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        let at = |r: usize, c: usize| r * width + (c + kl - r);

        for k in 0..n.saturating_sub(1) {
            let pivot = band[at(k, k)];
            if pivot.abs() <= tiny {
                return Err(MfgError::LinearSolve(format!("zero pivot at row {k}")));
            }
            let r_end = (k + kl + 1).min(n);
            let c_end = (k + ku + 1).min(n - 1);
            for r in k + 1..r_end {
                let l = band[at(r, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[at(r, k)] = l;
                for c in k + 1..c_end {
                    band[at(r, c)] -= l * band[at(k, c)];
                }
                last[r] -= l * last[k];
            }
        }
        if last[n - 1].abs() <= tiny {
            return Err(MfgError::LinearSolve("singular matrix (last pivot)".into()));
        }
        Ok(Self {
            n,
            kl,
            ku,
            band,
            last,
            ordering,
        })
    }

    /// Solves `A x = b` with `b` and `x` in storage order.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let width = self.kl + self.ku + 1;
        let kl = self.kl;
        let at = |r: usize, c: usize| r * width + (c + kl - r);
        let mut y = vec![0.0; n];
        for (k, &bk) in b.iter().enumerate() {
            y[self.ordering.position(k)] = bk;
        }
        for r in 0..n {
            let c0 = r.saturating_sub(self.kl);
            let mut s = y[r];
            for c in c0..r {
                s -= self.band[at(r, c)] * y[c];
            }
            y[r] = s;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = y[n - 1] / self.last[n - 1];
        for r in (0..n - 1).rev() {
            let c_end = (r + self.ku + 1).min(n - 1);
            let mut s = y[r] - self.last[r] * x[n - 1];
            for c in r + 1..c_end {
                s -= self.band[at(r, c)] * x[c];
            }
            x[r] = s / self.band[at(r, r)];
        }
        let mut out = vec![0.0; n];
        for (k, o) in out.iter_mut().enumerate() {
            *o = x[self.ordering.position(k)];
        }
        out
    }
}

/// Factors and solves, refining until `||Ax - b||_inf <= rel_tol * ||b||_inf`.
pub fn solve_with_contract(
    a: &SparseMatrix,
    grid: TorusGrid,
    b: &[f64],
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let lu = BandedLu::factor(a, grid)?;
    let mut x = lu.solve(b);
    let b_norm = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let target = rel_tol * b_norm;
    for _ in 0..3 {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let r_norm = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if r_norm <= target || r_norm == 0.0 {
            return Ok(x);
        }
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    let ax = a.matvec(&x);
    let r_norm = b
        .iter()
        .zip(&ax)
        .fold(0.0f64, |acc, (bi, ai)| acc.max((bi - ai).abs()));
    if r_norm <= target {
        Ok(x)
    } else {
        Err(MfgError::LinearSolve(format!(
            "residual {r_norm:.3e} above contract {target:.3e}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_laplacian_plus_identity(grid: TorusGrid, shift: f64) -> SparseMatrix {
        let mut a = SparseMatrix::new(grid.len());
        for k in 0..grid.len() {
            let (i, j) = grid.coords(k);
            let (i, j) = (i as isize, j as isize);
            a.add(k, k, 4.0 + shift);
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                a.add(k, grid.index(i + di, j + dj), -1.0);
            }
            // break symmetry a little
            a.add(k, grid.index(i + 1, j), -0.25 * ((k % 3) as f64));
            a.add(k, k, 0.25 * ((k % 3) as f64));
        }
        a
    }

    #[test]
    fn fold_ordering_is_a_permutation_with_small_band() {
        for n in [1, 2, 3, 4, 5, 8] {
            let grid = TorusGrid::new(n).unwrap();
            let ord = FoldOrdering::new(grid);
            let mut seen = vec![false; grid.len()];
            for k in 0..grid.len() {
                seen[ord.position(k)] = true;
            }
            assert!(seen.iter().all(|&s| s));
            let a = periodic_laplacian_plus_identity(grid, 1.0);
            for r in 0..grid.len() {
                for &(c, _) in a.row(r) {
                    let d = ord.position(r).abs_diff(ord.position(c));
                    assert!(d <= ord.half_bandwidth(), "n={n}");
                }
            }
        }
    }

    #[test]
    fn banded_solve_matches_matvec() {
        for n in [2, 3, 4, 7, 8] {
            let grid = TorusGrid::new(n).unwrap();
            let a = periodic_laplacian_plus_identity(grid, 0.5);
            let x_true: Vec<f64> = (0..grid.len()).map(|k| (k as f64 * 0.37).sin()).collect();
            let b = a.matvec(&x_true);
            let x = solve_with_contract(&a, grid, &b, 1e-13).unwrap();
            for (u, v) in x.iter().zip(&x_true) {
                assert!((u - v).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn dense_last_column_is_supported() {
        let grid = TorusGrid::new(5).unwrap();
        let mut a = periodic_laplacian_plus_identity(grid, 0.0);
        let ord = FoldOrdering::new(grid);
        let ones = vec![1.0; grid.len()];
        a.set_column(ord.last_unknown(), &ones);
        let x_true: Vec<f64> = (0..grid.len()).map(|k| (k as f64).cos()).collect();
        let b = a.matvec(&x_true);
        let x = solve_with_contract(&a, grid, &b, 1e-13).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let grid = TorusGrid::new(4).unwrap();
        let mut a = periodic_laplacian_plus_identity(grid, 1.0);
        let zeros = vec![0.0; grid.len()];
        a.set_column(3, &zeros);
        assert!(BandedLu::factor(&a, grid).is_err());
    }
}
