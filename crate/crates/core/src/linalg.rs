//! Small dense square-matrix helpers. Dimensions here are the source
//! dimension `d`, so everything is naive row-major and allocation-light.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZdqError};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_row_major(dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(ZdqError::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = T::one();
        }
        m
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.dim + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.data[c * n + r] = self.data[r * n + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                for c in 0..n {
                    out.data[r * n + c] = out.data[r * n + c] + a * other.data[k * n + c];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    /// `out = self * x`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let n = self.dim;
        for (r, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.data[r * n..(r + 1) * n];
            *o = row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn pow(&self, k: usize) -> Self {
        let mut out = Self::identity(self.dim);
        for _ in 0..k {
            out = out.matmul(self);
        }
        out
    }

    pub fn trace(&self) -> T {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        let n = self.dim;
        let scale = self.max_abs().max(T::one());
        (0..n).all(|r| (0..r).all(|c| (self.get(r, c) - self.get(c, r)).abs() <= tol * scale))
    }

    /// Lower-triangular Cholesky factor, or `None` when not positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let n = self.dim;
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag = diag - l.get(j, k) * l.get(j, k);
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return None;
            }
            let djj = diag.sqrt();
            l.data[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - l.get(i, k) * l.get(j, k);
                }
                l.data[i * n + j] = s / djj;
            }
        }
        Some(l)
    }

    /// Solves `L y = b` for lower-triangular `self`.
    pub fn forward_solve_into(&self, b: &[T], y: &mut [T]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.data[i * n + k] * y[k];
            }
            y[i] = s / self.data[i * n + i];
        }
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        let n = self.dim;
        let mut a = self.data.clone();
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            let mut total = T::zero();
            for r in 0..n {
                for c in 0..n {
                    let v = a[r * n + c] * a[r * n + c];
                    total = total + v;
                    if r != c {
                        off = off + v;
                    }
                }
            }
            if off <= eps * eps * total || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let cs = T::one() / (t * t + T::one()).sqrt();
                    let sn = t * cs;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = cs * akp - sn * akq;
                        a[k * n + q] = sn * akp + cs * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = cs * apk - sn * aqk;
                        a[q * n + k] = sn * apk + cs * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<T> = (0..n).map(|i| a[i * n + i]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
        eig
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let s = Matrix::<f64>::from_row_major(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let l = s.cholesky().unwrap();
        let back = l.matmul(&l.transpose());
        for (a, b) in back.as_slice().iter().zip(s.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        let not_pd = Matrix::<f64>::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(not_pd.cholesky().is_none());
    }

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        let s = Matrix::<f64>::from_row_major(2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let e = s.symmetric_eigenvalues();
        let disc: f64 = (1.0f64 + 4.0).sqrt();
        assert!((e[0] - (5.0 - disc) / 2.0).abs() < 1e-14);
        assert!((e[1] - (5.0 + disc) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn forward_solve_inverts_lower() {
        let l = Matrix::<f64>::from_row_major(3, vec![2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 1.5]).unwrap();
        let y = [1.0f64, -2.0, 0.25];
        let b = l.mul_vec(&y);
        let mut out = [0.0; 3];
        l.forward_solve_into(&b, &mut out);
        for (a, b) in out.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
