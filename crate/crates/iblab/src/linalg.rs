//! Minimal dense linear algebra: a row-major matrix type, a cyclic Jacobi
//! eigensolver for symmetric matrices, and the spectral helpers built on it
//! (matrix functions, solves, Cholesky factors for sampling).
//!
//! The Jacobi solver is deliberately in-repo; all symmetric matrices handled
//! here are small (layer widths, kernel grams over a few hundred points).

use crate::scalar::{lit, Real};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("matrix not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
    #[error("jacobi sweep limit reached without convergence")]
    NoConvergence,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.concat() }
    }

    pub fn diag(values: &[F]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: F) -> Self {
        let data = self.data.iter().map(|&a| a * s).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn frobenius_norm(&self) -> F {
        self.data.iter().map(|&a| a * a).sum::<F>().sqrt()
    }

    pub fn trace(&self) -> F {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &a| m.max(a.abs()))
    }

    /// Max |a_ij - a_ji| over all pairs.
    pub fn asymmetry(&self) -> F {
        let mut worst = F::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// (A + Aᵀ)/2, squashing roundoff asymmetry.
    pub fn symmetrized(&self) -> Self {
        let half = lit::<F>(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * half)
    }

    /// Quadratic form vᵀ A v.
    pub fn quadratic_form(&self, v: &[F]) -> F {
        self.matvec(v).iter().zip(v).map(|(&a, &b)| a * b).sum()
    }

    /// Cholesky factor L (lower triangular, A = L Lᵀ).
    pub fn cholesky(&self) -> Result<Self, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if s <= F::zero() {
                        return Err(LinalgError::NotPositiveDefinite {
                            pivot: s.to_f64().unwrap_or(f64::NAN),
                            index: i,
                        });
                    }
                    l[(i, j)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Off-diagonal mass is driven below `1e-12 * ||A||_F`. Eigenvalues are
    /// returned ascending with matching eigenvector columns.
    pub fn sym_eigen(&self) -> Result<SymEigen<F>, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let asym = self.asymmetry();
        let scale = self.frobenius_norm().max(F::one());
        if asym > lit::<F>(1e-8) * scale {
            return Err(LinalgError::NotSymmetric(asym.to_f64().unwrap_or(f64::NAN)));
        }
        let n = self.rows;
        let mut a = self.symmetrized();
        let mut v = Self::identity(n);
        if n <= 1 {
            return Ok(SymEigen { values: (0..n).map(|i| a[(i, i)]).collect(), vectors: v });
        }
        let tol = lit::<F>(1e-12) * self.frobenius_norm().max(F::min_positive_value());
        let max_sweeps = 64;
        for _ in 0..max_sweeps {
            let mut off = F::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            let off = (off + off).sqrt();
            if off <= tol {
                let mut pairs: Vec<(F, usize)> =
                    (0..n).map(|i| (a[(i, i)], i)).collect();
                pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                let values: Vec<F> = pairs.iter().map(|&(val, _)| val).collect();
                let vectors = Self::from_fn(n, n, |r, c| v[(r, pairs[c].1)]);
                return Ok(SymEigen { values, vectors });
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= tol * lit::<F>(1e-3) {
                        continue;
                    }
                    // Rotation angle per Numerical Recipes 11.1.
                    let theta = (a[(q, q)] - a[(p, p)]) / (lit::<F>(2.0) * apq);
                    let t = {
                        let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                        sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                    };
                    let c = F::one() / (t * t + F::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        Err(LinalgError::NoConvergence)
    }
}

impl<F: Real> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F: Real> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Result of [`Matrix::sym_eigen`]: `A = V diag(values) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymEigen<F> {
    /// Eigenvalues, ascending.
    pub values: Vec<F>,
    /// Eigenvector columns, aligned with `values`.
    pub vectors: Matrix<F>,
}

impl<F: Real> SymEigen<F> {
    /// Rebuilds `V f(diag) Vᵀ` for a scalar spectral map `f`.
    pub fn spectral_map(&self, f: impl Fn(F) -> F) -> Matrix<F> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled.matmul(&self.vectors.transpose())
    }

    /// Solves `A x = b` through the eigenbasis.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let vt_b = self.vectors.transpose().matvec(b);
        let scaled: Vec<F> =
            vt_b.iter().zip(&self.values).map(|(&c, &l)| c / l).collect();
        self.vectors.matvec(&scaled)
    }

    pub fn min_eigenvalue(&self) -> F {
        self.values.first().copied().unwrap_or_else(F::zero)
    }

    pub fn max_eigenvalue(&self) -> F {
        self.values.last().copied().unwrap_or_else(F::zero)
    }
}

/// Gram-Schmidt orthonormalization of the rows of `m` (used to build random
/// orthonormal frames). Rows must be linearly independent.
pub fn orthonormalize_rows<F: Real>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for j in 0..i {
            let dot: F = out.row(i).iter().zip(out.row(j)).map(|(&a, &b)| a * b).sum();
            let (head, tail) = out.data_mut().split_at_mut(i * m.cols());
            let rj = &head[j * m.cols()..(j + 1) * m.cols()];
            for (a, &b) in tail[..m.cols()].iter_mut().zip(rj) {
                *a -= dot * b;
            }
        }
        let norm: F = out.row(i).iter().map(|&a| a * a).sum::<F>().sqrt();
        assert!(norm > F::epsilon(), "rows not independent");
        for a in out.row_mut(i) {
            *a /= norm;
        }
    }
    out
}
