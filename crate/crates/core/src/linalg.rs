//! Dense symmetric matrices of small order (the head weights `D`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance used when ingesting externally supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A `d × d` real symmetric matrix stored densely in row-major order.
///
/// Every mutating method writes `(i, j)` and `(j, i)` from the same value, so
/// the two halves are bit-identical at all times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, T::one())
    }

    pub fn scalar(dim: usize, value: T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = value;
        }
        m
    }

    pub fn diagonal(values: &[T]) -> Self {
        let dim = values.len();
        let mut m = Self::zeros(dim);
        for (i, v) in values.iter().enumerate() {
            m.data[i * dim + i] = *v;
        }
        m
    }

    /// Builds a matrix from a row-major buffer after checking symmetry within
    /// [`SYMMETRY_TOL`]. The stored matrix is the exact symmetric part.
    pub fn from_row_major(dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        let tol = T::lit(SYMMETRY_TOL);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let gap = (data[i * dim + j] - data[j * dim + i]).abs();
                if !(gap <= tol) {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        gap: gap.as_f64(),
                    });
                }
            }
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Fills the matrix from a generator called once per upper-triangular entry
    /// `(i, j)` with `i <= j`.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        let half = T::lit(0.5);
        for i in 0..d {
            for j in (i + 1)..d {
                let v = (self.data[i * d + j] + self.data[j * d + i]) * half;
                self.data[i * d + j] = v;
                self.data[j * d + i] = v;
            }
        }
    }

    #[inline(always)]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    /// `out = self * v`.
    #[inline]
    pub fn mul_vec_into(&self, v: &[T], out: &mut [T]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.data[i * d..(i + 1) * d];
            let mut acc = T::zero();
            for k in 0..d {
                acc += row[k] * v[k];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// `⟨x, self · y⟩`.
    #[inline]
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        let d = self.dim;
        let mut acc = T::zero();
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            let mut r = T::zero();
            for k in 0..d {
                r += row[k] * y[k];
            }
            acc += x[i] * r;
        }
        acc
    }

    /// Frobenius inner product `A : B = tr(AᵀB)`.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a * *b)
            .sum()
    }

    pub fn frobenius_sq(&self) -> T {
        self.frobenius_dot(self)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|a| *a * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += s * other`, entrywise; symmetry is preserved bit-exactly.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * *b;
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| self.data[i * d + j].to_bits_eq(self.data[j * d + i])))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    /// Eigenvalues by cyclic Jacobi rotations, in ascending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        let d = self.dim;
        let mut a = self.data.clone();
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[i * d + j] * a[i * d + j];
                }
            }
            let scale: T = a.iter().map(|x| *x * *x).sum();
            if off <= eps * eps * scale || off == T::zero() {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * d + q];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[p * d + p];
                    let aqq = a[q * d + q];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * d + k];
                        let aqk = a[q * d + k];
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..d).map(|i| a[i * d + i]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    /// Operator 2-norm, i.e. the largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> T {
        self.eigenvalues()
            .into_iter()
            .map(|e| e.abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> SymMatrix<U> {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    #[inline]
    fn to_bits_eq(self, other: Self) -> bool {
        // Covers NaN payloads too: identical bit patterns only.
        self == other || (self.is_nan() && other.is_nan())
    }
}
