//! Banded matrices and a partial-pivoting LU factorization.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` superdiagonals.
///
/// Row `i` stores columns `i - kl ..= i + ku + kl`; the extra `kl`
/// columns hold fill-in produced by pivoting.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Panics if `(i, j)` lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band kl={} ku={}", self.kl, self.ku);
        let k = self.slot(i, j);
        self.data[k] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band kl={} ku={}", self.kl, self.ku);
        let k = self.slot(i, j);
        self.data[k] += value;
    }

    /// a * self + b * other, entrywise; both must share dimensions.
    pub fn combine(&self, a: f64, other: &BandedMatrix, b: f64) -> BandedMatrix {
        assert_eq!(self.n, other.n);
        let kl = self.kl.max(other.kl);
        let ku = self.ku.max(other.ku);
        let mut out = BandedMatrix::zeros(self.n, kl, ku);
        for i in 0..self.n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(self.n) {
                out.set(i, j, a * self.get(i, j) + b * other.get(i, j));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n))
                    .map(|j| self.data[self.slot(i, j)] * x[j])
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn factor(&self) -> Result<BandedLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut lu = self.clone();
        let mut pivots = vec![0usize; n];
        let threshold = 1e-14 * self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.data[lu.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < threshold {
                return Err(Error::Singular { row: k, pivot: best, threshold });
            }
            pivots[k] = p;
            let last_col = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = lu.slot(k, j);
                    let b = lu.slot(p, j);
                    lu.data.swap(a, b);
                }
            }
            let pivot = lu.data[lu.slot(k, k)];
            for i in k + 1..=last_row {
                let s = lu.slot(i, k);
                let m = lu.data[s] / pivot;
                lu.data[s] = m;
                if m != 0.0 {
                    for j in k + 1..=last_col {
                        let src = lu.data[lu.slot(k, j)];
                        let dst = lu.slot(i, j);
                        lu.data[dst] -= m * src;
                    }
                }
            }
        }
        Ok(BandedLu { lu, pivots })
    }
}

/// LU factors of a banded matrix with row interchanges interleaved.
#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let lu = &self.lu;
        let (n, kl, ku) = (lu.n, lu.kl, lu.ku);
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                    b[i] -= lu.data[lu.slot(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + ku + kl).min(n - 1) {
                acc -= lu.data[lu.slot(i, j)] * b[j];
            }
            b[i] = acc / lu.data[lu.slot(i, i)];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Factors `matrix` and solves `matrix x = rhs`.
pub fn solve_banded(matrix: &BandedMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(matrix.factor()?.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn laplacian(n: usize) -> BandedMatrix {
        let mut m = BandedMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.set(i, i, 2.0);
            if i > 0 {
                m.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.set(i, i + 1, -1.0);
            }
        }
        m
    }

    #[test]
    fn identity_returns_rhs() {
        let rhs = vec![1.0, -2.0, 3.5, 0.0];
        assert_eq!(solve_banded(&BandedMatrix::identity(4), &rhs).unwrap(), rhs);
    }

    #[test]
    fn laplacian_eigenvector() {
        let n = 40;
        let m = laplacian(n);
        let theta = std::f64::consts::PI / (n as f64 + 1.0);
        let phi: Vec<f64> = (1..=n).map(|j| (j as f64 * theta).sin()).collect();
        let lambda = 2.0 - 2.0 * theta.cos();
        let x = solve_banded(&m, &phi).unwrap();
        for (xi, pi) in x.iter().zip(&phi) {
            assert!((xi - pi / lambda).abs() < 1e-10 * (1.0 / lambda));
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = laplacian(5);
        for j in 0..5 {
            if m.in_band(2, j) {
                m.set(2, j, 0.0);
            }
        }
        assert!(matches!(m.factor(), Err(Error::Singular { .. })));
    }

    proptest! {
        #[test]
        fn matches_dense_solver(
            n in 3usize..25,
            kl in 0usize..4,
            ku in 0usize..4,
            seed in proptest::collection::vec(-1.0f64..1.0, 25 * 25 + 25),
        ) {
            let mut m = BandedMatrix::zeros(n, kl, ku);
            let mut k = 0;
            for i in 0..n {
                for j in 0..n {
                    if m.in_band(i, j) {
                        m.set(i, j, seed[k] + if i == j { 0.1 } else { 0.0 });
                    }
                    k += 1;
                }
            }
            let rhs: Vec<f64> = seed[625..625 + n].to_vec();
            let dense = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
            if let Some(expected) = dense.clone().lu().solve(&DVector::from_vec(rhs.clone())) {
                if dense.clone().try_inverse().map_or(false, |inv| inv.norm() * dense.norm() < 1e8) {
                    let x = solve_banded(&m, &rhs).unwrap();
                    let r = m.matvec(&x);
                    let scale = rhs.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
                    for (ri, bi) in r.iter().zip(&rhs) {
                        prop_assert!((ri - bi).abs() <= 1e-8 * scale);
                    }
                    for (xi, ei) in x.iter().zip(expected.iter()) {
                        prop_assert!((xi - ei).abs() <= 1e-6 * (1.0 + ei.abs()));
                    }
                }
            }
        }
    }
}
