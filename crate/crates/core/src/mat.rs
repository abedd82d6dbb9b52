//! Minimal dense matrices over a generic scalar.
//!
//! Increment values, Lévy areas, densities and σ outputs are all small
//! (rows, cols ≤ a few dozen); a flat row-major buffer with explicit loops
//! is all that is needed. The one large-matrix routine, the Cholesky
//! factorisation used by the fBm sampler, lives here as well.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length mismatch");
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    /// Column vector.
    pub fn col(data: Vec<T>) -> Self {
        let rows = data.len();
        Mat { rows, cols: 1, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_assign_at(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = self.data[r * self.cols + c] + v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: T) -> Self {
        let data = self.data.iter().map(|&a| a * s).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: ({}, {}) x ({}, {})",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == T::zero() {
                    continue;
                }
                for c in 0..other.cols {
                    out.add_assign_at(r, c, a * other.get(k, c));
                }
            }
        }
        Ok(out)
    }

    /// Outer product `a ⊗ b` of two column vectors: `(a ⊗ b)[i][j] = a_i b_j`.
    pub fn outer(a: &Self, b: &Self) -> Self {
        assert_eq!(a.cols, 1, "outer: lhs must be a column vector");
        assert_eq!(b.cols, 1, "outer: rhs must be a column vector");
        Mat::from_fn(a.rows, b.rows, |i, j| a.get(i, 0) * b.get(j, 0))
    }

    /// Plain Frobenius inner product `Σ_{i,j} a[i][j] b[i][j]`.
    pub fn frobenius(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape(), "frobenius: shape mismatch");
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc = acc + a * b;
        }
        acc
    }

    /// Entrywise max norm — the one vector/matrix norm used throughout.
    pub fn max_norm(&self) -> T {
        let mut m = T::zero();
        for &v in &self.data {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// In-place lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Returns the index of the first non-positive leading minor on failure.
pub fn cholesky<T: Scalar>(a: &Mat<T>) -> std::result::Result<Mat<T>, usize> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky: square matrix required");
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            let v = l.get(j, k);
            diag = diag - v * v;
        }
        if diag <= T::zero() || !diag.is_finite() {
            return Err(j);
        }
        let dsqrt = diag.sqrt();
        l.set(j, j, dsqrt);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s = s - l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / dsqrt);
        }
    }
    Ok(l)
}
