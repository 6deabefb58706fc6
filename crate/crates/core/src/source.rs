//! Linear Gaussian source `X_{t+1} = A X_t + W_t` with `W_t ~ N(0, Σ)`.

use rand::Rng;
use rayon::prelude::*;

use crate::belief::Belief;
use crate::error::{Result, ZdqError};
use crate::linalg::Matrix;
use crate::rng::stream_rng;
use crate::scalar::{sq_norm, Scalar};

/// Zero-mean nondegenerate Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel<T> {
    cov: Matrix<T>,
    chol: Matrix<T>,
    sigma_sq: T,
}

impl<T: Scalar> NoiseModel<T> {
    pub fn gaussian(cov: Matrix<T>) -> Result<Self> {
        if !cov.is_finite() {
            return Err(ZdqError::NonFinite("noise covariance"));
        }
        if !cov.is_symmetric(T::lit(1e-12)) {
            return Err(ZdqError::BadCovariance);
        }
        let chol = cov.cholesky().ok_or(ZdqError::BadCovariance)?;
        let sigma_sq = cov.trace();
        Ok(Self {
            cov,
            chol,
            sigma_sq,
        })
    }

    /// Zero noise, for exercising the deterministic part of the recursion.
    #[cfg(test)]
    pub(crate) fn noiseless(dim: usize) -> Self {
        Self {
            cov: Matrix::zeros(dim),
            chol: Matrix::zeros(dim),
            sigma_sq: T::zero(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// `E‖W‖² = tr Σ`.
    #[inline]
    pub fn sigma_sq(&self) -> T {
        self.sigma_sq
    }

    pub fn covariance(&self) -> &Matrix<T> {
        &self.cov
    }

    pub fn cholesky(&self) -> &Matrix<T> {
        &self.chol
    }

    /// Writes `L z` with `z` standard normal into `out`; `z` is scratch.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [T], out: &mut [T]) {
        for zi in z.iter_mut() {
            *zi = T::standard_normal(rng);
        }
        let n = self.dim();
        let l = self.chol.as_slice();
        for r in 0..n {
            let mut s = T::zero();
            for c in 0..=r {
                s = s + l[r * n + c] * z[c];
            }
            out[r] = s;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut z = vec![T::zero(); self.dim()];
        let mut out = vec![T::zero(); self.dim()];
        self.sample_into(rng, &mut z, &mut out);
        out
    }
}

/// Largest eigenvalue of `AᵀA`, the contraction factor of `x ↦ Ax` in squared norm.
pub fn max_sq_singular_value<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    if !a.is_finite() {
        return Err(ZdqError::NonFinite("A"));
    }
    let gram = a.transpose().matmul(a);
    let eig = gram.symmetric_eigenvalues();
    Ok(eig.last().copied().unwrap_or_else(T::zero).max(T::zero()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceModel<T> {
    a: Matrix<T>,
    noise: NoiseModel<T>,
    alpha: T,
}

impl<T: Scalar> SourceModel<T> {
    /// Validates stability (`α < 1`) and dimensions.
    pub fn new(a: Matrix<T>, noise: NoiseModel<T>) -> Result<Self> {
        if noise.dim() != a.dim() {
            return Err(ZdqError::DimensionMismatch {
                expected: a.dim(),
                got: noise.dim(),
            });
        }
        if a.dim() == 0 {
            return Err(ZdqError::InvalidParameter("dimension must be positive".into()));
        }
        let alpha = max_sq_singular_value(&a)?;
        if alpha >= T::one() {
            return Err(ZdqError::UnstableSource {
                alpha: alpha.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { a, noise, alpha })
    }

    pub fn gaussian(a: Matrix<T>, cov: Matrix<T>) -> Result<Self> {
        Self::new(a, NoiseModel::gaussian(cov)?)
    }

    /// Scalar AR(1) source `x' = a x + w`, `w ~ N(0, var)`.
    pub fn scalar(a: T, var: T) -> Result<Self> {
        Self::gaussian(Matrix::diagonal(&[a]), Matrix::diagonal(&[var]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    #[inline]
    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    #[inline]
    pub fn noise(&self) -> &NoiseModel<T> {
        &self.noise
    }

    #[inline]
    pub fn alpha(&self) -> T {
        self.alpha
    }

    #[inline]
    pub fn sigma_sq(&self) -> T {
        self.noise.sigma_sq
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Vec<T> {
        let w = self.noise.sample(rng);
        self.step_with_noise(x, &w)
    }

    pub fn step_with_noise(&self, x: &[T], w: &[T]) -> Vec<T> {
        let mut out = self.a.mul_vec(x);
        for (o, &wi) in out.iter_mut().zip(w) {
            *o = *o + wi;
        }
        out
    }

    /// Trajectory `X_0..X_T` (length `horizon + 1`) on stream 0 of `seed`.
    pub fn simulate(&self, init: &InitialDistribution<T>, horizon: usize, seed: u64) -> Vec<Vec<T>> {
        self.simulate_stream(init, horizon, seed, 0)
    }

    pub fn simulate_stream(
        &self,
        init: &InitialDistribution<T>,
        horizon: usize,
        seed: u64,
        stream: u64,
    ) -> Vec<Vec<T>> {
        let mut rng = stream_rng(seed, stream);
        let mut path = Vec::with_capacity(horizon + 1);
        let mut x = init.sample(&mut rng);
        for _ in 0..horizon {
            let next = self.step(&x, &mut rng);
            path.push(std::mem::replace(&mut x, next));
        }
        path.push(x);
        path
    }

    /// `n` trajectories, trajectory `k` on stream `k`.
    pub fn simulate_many(
        &self,
        init: &InitialDistribution<T>,
        horizon: usize,
        n: usize,
        seed: u64,
    ) -> Vec<Vec<Vec<T>>> {
        (0..n as u64)
            .into_par_iter()
            .map(|k| self.simulate_stream(init, horizon, seed, k))
            .collect()
    }

    /// `αᵗ m0 + σ²(1 − αᵗ)/(1 − α)`, the bound on `E‖X_t‖²` from `E‖X_0‖² = m0`.
    pub fn second_moment_bound(&self, m0: T, t: usize) -> T {
        second_moment_bound(self.alpha, self.sigma_sq(), m0, t)
    }

    /// `m0 + σ²/(1 − α)`, uniform in `t`.
    pub fn second_moment_cap(&self, m0: T) -> T {
        m0 + self.sigma_sq() / (T::one() - self.alpha)
    }

    /// Stationary covariance `S = A S Aᵀ + Σ`, by fixed-point iteration.
    pub fn stationary_covariance(&self) -> Matrix<T> {
        let at = self.a.transpose();
        let mut s = self.noise.cov.clone();
        for _ in 0..10_000 {
            let next = self.a.matmul(&s).matmul(&at).add(&self.noise.cov);
            let delta = next
                .as_slice()
                .iter()
                .zip(s.as_slice())
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            s = next;
            if delta <= T::epsilon() * s.max_abs() {
                break;
            }
        }
        s
    }
}

pub fn second_moment_bound<T: Scalar>(alpha: T, sigma_sq: T, m0: T, t: usize) -> T {
    let at = alpha.powi(t as i32);
    let geometric = if alpha == T::zero() {
        if t == 0 {
            T::zero()
        } else {
            T::one()
        }
    } else {
        (T::one() - at) / (T::one() - alpha)
    };
    at * m0 + sigma_sq * geometric
}

/// Law of `X_0`.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialDistribution<T> {
    PointMass(Vec<T>),
    Particles(Belief<T>),
}

impl<T: Scalar> InitialDistribution<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::PointMass(x) => x.len(),
            Self::Particles(b) => b.dim(),
        }
    }

    pub fn belief(&self) -> Belief<T> {
        match self {
            Self::PointMass(x) => Belief::point_mass(x.clone()),
            Self::Particles(b) => b.clone(),
        }
    }

    /// `E‖X_0‖²`.
    pub fn second_moment(&self) -> T {
        match self {
            Self::PointMass(x) => sq_norm(x),
            Self::Particles(b) => b.moments().1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        match self {
            Self::PointMass(x) => x.clone(),
            Self::Particles(b) => b.sample(rng).to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(dim: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::<f64>::from_row_major(dim, v.to_vec()).unwrap()
    }

    #[test]
    fn alpha_diagonal_and_rotation() {
        assert!((max_sq_singular_value(&Matrix::<f64>::diagonal(&[0.5, 0.3])).unwrap() - 0.25).abs() < 1e-15);
        for theta in [0.1f64, 0.7, 2.3] {
            let (s, c) = theta.sin_cos();
            let r = m(2, &[0.9 * c, -0.9 * s, 0.9 * s, 0.9 * c]);
            let alpha = max_sq_singular_value(&r).unwrap();
            assert!((alpha - 0.81).abs() <= 1e-10 * 0.81);
        }
    }

    #[test]
    fn alpha_upper_triangular_matches_quadratic_formula() {
        // AᵀA = [[0.36, 0.18], [0.18, 0.45]]
        let (p, q, r) = (0.36f64, 0.18f64, 0.45f64);
        let tr = p + r;
        let det = p * r - q * q;
        let oracle = (tr + (tr * tr - 4.0 * det).sqrt()) / 2.0;
        let alpha = max_sq_singular_value(&m(2, &[0.6, 0.3, 0.0, 0.6])).unwrap();
        assert!((alpha - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn alpha_rejects_non_finite() {
        let bad = m(1, &[f64::NAN]);
        assert!(matches!(max_sq_singular_value(&bad), Err(ZdqError::NonFinite(_))));
    }

    #[test]
    fn validate_examples() {
        let id = SourceModel::<f64>::gaussian(Matrix::<f64>::identity(2), Matrix::identity(2));
        assert!(matches!(id, Err(ZdqError::UnstableSource { .. })));
        let zero = SourceModel::<f64>::gaussian(Matrix::<f64>::zeros(2), Matrix::identity(2)).unwrap();
        assert_eq!(zero.alpha(), 0.0);
        let diag = SourceModel::<f64>::gaussian(Matrix::<f64>::diagonal(&[0.5, 0.3]), Matrix::identity(2)).unwrap();
        assert!((diag.alpha() - 0.25).abs() < 1e-15);
        let bad_cov = SourceModel::<f64>::gaussian(Matrix::<f64>::diagonal(&[0.5]), Matrix::<f64>::diagonal(&[-1.0]));
        assert!(matches!(bad_cov, Err(ZdqError::BadCovariance)));
        let asym = SourceModel::<f64>::gaussian(Matrix::<f64>::zeros(2), m(2, &[1.0, 0.5, 0.0, 1.0]));
        assert!(matches!(asym, Err(ZdqError::BadCovariance)));
    }

    #[test]
    fn step_examples() {
        let memoryless = SourceModel::<f64>::scalar(0.0, 1.0).unwrap();
        let mut r1 = stream_rng(5, 0);
        let mut r2 = stream_rng(5, 0);
        let x = memoryless.step(&[3.0], &mut r1);
        let w = memoryless.noise().sample(&mut r2);
        assert_eq!(x, w);

        let noiseless = SourceModel::new(
            Matrix::<f64>::from_row_major(2, vec![0.5, 0.1, 0.0, 0.2]).unwrap(),
            NoiseModel::noiseless(2),
        )
        .unwrap();
        let y = noiseless.step(&[1.0, 2.0], &mut stream_rng(0, 0));
        assert_eq!(y, vec![0.7, 0.4]);

        let ar = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
        let a = ar.step(&[2.0], &mut stream_rng(11, 2));
        let w = ar.noise().sample(&mut stream_rng(11, 2));
        assert_eq!(a[0], 1.0 + w[0]);
    }

    #[test]
    fn step_is_affine_for_shared_noise() {
        let model = SourceModel::<f64>::gaussian(m(2, &[0.4, 0.2, -0.1, 0.3]), m(2, &[1.0, 0.2, 0.2, 0.5])).unwrap();
        let w = model.noise().sample(&mut stream_rng(3, 9));
        let x1 = [0.3, -1.2];
        let x2 = [2.0, 0.7];
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let lhs: Vec<f64> = model
            .step_with_noise(&x1, &w)
            .iter()
            .zip(model.step_with_noise(&x2, &w))
            .zip(model.step_with_noise(&[0.0, 0.0], &w))
            .map(|((a, b), c)| a + b - c)
            .collect();
        let rhs = model.step_with_noise(&sum, &w);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn simulate_contract() {
        let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
        let init = InitialDistribution::PointMass(vec![1.5]);
        let path = model.simulate(&init, 0, 1);
        assert_eq!(path, vec![vec![1.5]]);
        let a = model.simulate(&init, 20, 42);
        let b = model.simulate(&init, 20, 42);
        assert_eq!(a.len(), 21);
        assert_eq!(a[0], vec![1.5]);
        let bits = |p: &Vec<Vec<f64>>| p.iter().map(|x| x[0].to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn second_moment_bound_examples() {
        let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
        assert_eq!(model.second_moment_bound(1.0, 0), 1.0);
        assert!((model.second_moment_cap(1.0) - 7.0 / 3.0).abs() < 1e-15);
        assert!((model.second_moment_bound(1.0, 200) - 4.0 / 3.0).abs() < 1e-12);
        assert!(model.second_moment_bound(1.0, 3) <= model.second_moment_cap(1.0));
        let memoryless = SourceModel::<f64>::scalar(0.0, 1.0).unwrap();
        for t in 1..5 {
            assert_eq!(memoryless.second_moment_bound(4.0, t), 1.0);
        }
        for t in 0..30 {
            assert!(model.second_moment_bound(1.0, t) <= model.second_moment_cap(1.0) + 1e-15);
            assert!(model.second_moment_bound(2.0, t) >= model.second_moment_bound(1.0, t));
        }
    }

    #[test]
    fn stationary_covariance_scalar() {
        let model = SourceModel::<f64>::scalar(0.5, 1.0).unwrap();
        let s = model.stationary_covariance();
        assert!((s.get(0, 0) - 4.0 / 3.0).abs() < 1e-12);
    }
}
