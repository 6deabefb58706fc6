//! Weighted particle beliefs and the symbol-conditioned filtering update.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZdqError};
use crate::quantizer::ConvexQuantizer;
use crate::scalar::{sq_norm, Scalar};
use crate::source::SourceModel;

/// Particle-filter knobs shared by cover building, kernel freezing and rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FilterSettings<T> {
    /// Particles per filtered belief.
    pub n_particles: usize,
    /// Cells with less belief mass than this are treated as empty.
    pub mass_floor: T,
    /// Largest support handed to the exact transport solver.
    pub exact_budget: usize,
}

impl<T: Scalar> Default for FilterSettings<T> {
    fn default() -> Self {
        Self {
            n_particles: 128,
            mass_floor: T::lit(1e-9),
            exact_budget: crate::ot::DEFAULT_EXACT_BUDGET,
        }
    }
}

/// Gaussian mixture `Σ_j w_j N(c_j, Σ)` the particles of a filtered belief
/// were drawn from (`Σ` is the source noise covariance).
#[derive(Clone, Debug, PartialEq)]
pub struct Predictive<T> {
    pub centers: Vec<T>,
    pub weights: Vec<T>,
}

/// Discrete probability measure `Σ_j w_j δ_{x_j}` on ℝ^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "BeliefRecord<T>", into = "BeliefRecord<T>")]
pub struct Belief<T> {
    dim: usize,
    points: Vec<T>,
    weights: Vec<T>,
    predictive: Option<Predictive<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct BeliefRecord<T> {
    dim: usize,
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> TryFrom<BeliefRecord<T>> for Belief<T> {
    type Error = ZdqError;
    fn try_from(r: BeliefRecord<T>) -> Result<Self> {
        Belief::new(r.dim, r.points, r.weights)
    }
}

impl<T: Scalar> From<Belief<T>> for BeliefRecord<T> {
    fn from(b: Belief<T>) -> Self {
        BeliefRecord {
            dim: b.dim,
            points: b.points,
            weights: b.weights,
        }
    }
}

fn weight_tolerance<T: Scalar>(n: usize) -> T {
    T::lit(1e-12).max(T::epsilon() * T::from_usize_lossy(4 * n.max(1)))
}

impl<T: Scalar> Belief<T> {
    /// Weights must be non-negative and sum to one within `1e-12`.
    pub fn new(dim: usize, points: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(ZdqError::InvalidBelief("dimension must be positive".into()));
        }
        if weights.is_empty() || points.len() != dim * weights.len() {
            return Err(ZdqError::InvalidBelief(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(ZdqError::NonFinite("belief"));
        }
        if weights.iter().any(|&w| w < T::zero()) {
            return Err(ZdqError::InvalidBelief("negative weight".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > weight_tolerance::<T>(weights.len()) {
            return Err(ZdqError::InvalidBelief(format!("weights sum to {total}")));
        }
        Ok(Self {
            dim,
            points,
            weights,
            predictive: None,
        })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn from_unnormalized(dim: usize, points: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(ZdqError::InvalidBelief("total weight is not positive".into()));
        }
        Self::new(dim, points, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn equal_weight(dim: usize, points: Vec<T>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(ZdqError::InvalidBelief("empty or ragged particle set".into()));
        }
        let n = points.len() / dim;
        let w = T::one() / T::from_usize_lossy(n);
        Self::new(dim, points, vec![w; n])
    }

    pub fn point_mass(x: Vec<T>) -> Self {
        Self {
            dim: x.len(),
            points: x,
            weights: vec![T::one()],
            predictive: None,
        }
    }

    /// `n` draws from `N(mean, L Lᵀ)`, equally weighted.
    pub fn gaussian_sample<R: Rng + ?Sized>(mean: &[T], chol: &crate::linalg::Matrix<T>, n: usize, rng: &mut R) -> Self {
        let d = mean.len();
        let mut points = Vec::with_capacity(n * d);
        let mut z = vec![T::zero(); d];
        let l = chol.as_slice();
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = T::standard_normal(rng);
            }
            for r in 0..d {
                let mut s = mean[r];
                for c in 0..=r {
                    s = s + l[r * d + c] * z[c];
                }
                points.push(s);
            }
        }
        Self::equal_weight(d, points).expect("gaussian sample is a valid belief")
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, j: usize) -> &[T] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn predictive(&self) -> Option<&Predictive<T>> {
        self.predictive.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[T], T)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Same weighted point set (the mixture provenance is ignored).
    pub fn same_measure(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.weights == other.weights
    }

    /// Weighted mean and `E‖X‖²`.
    pub fn moments(&self) -> (Vec<T>, T) {
        let mut mean = vec![T::zero(); self.dim];
        let mut second = T::zero();
        for (x, w) in self.iter() {
            for (m, &xi) in mean.iter_mut().zip(x) {
                *m = *m + w * xi;
            }
            second = second + w * sq_norm(x);
        }
        (mean, second)
    }

    /// Trace of the covariance.
    pub fn total_variance(&self) -> T {
        let (mean, second) = self.moments();
        (second - sq_norm(&mean)).max(T::zero())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[T] {
        let u = T::unit_uniform(rng);
        let mut acc = T::zero();
        for (j, &w) in self.weights.iter().enumerate() {
            acc = acc + w;
            if u < acc {
                return self.point(j);
            }
        }
        let last = self.weights.iter().rposition(|&w| w > T::zero()).unwrap_or(0);
        self.point(last)
    }

    /// Belief mass of every cell of `q`.
    pub fn symbol_probs(&self, q: &ConvexQuantizer<T>) -> Vec<T> {
        let mut probs = vec![T::zero(); q.n_cells()];
        for (x, w) in self.iter() {
            let i = q.encode(x);
            probs[i] = probs[i] + w;
        }
        probs
    }

    /// Conditions on `q(X_t) = symbol` and pushes the result through the
    /// source: returns `n_out` equal-weight draws from
    /// `Σ_{x_j ∈ cell} (w_j / π(cell)) N(A x_j, Σ)`.
    ///
    /// When the particles give the cell less than `mass_floor` but the belief
    /// remembers the mixture it was drawn from, the conditioning is done on
    /// that mixture instead (importance sampling restricted to the cell).
    /// Without a mixture the symbol is reported as impossible.
    pub fn filter_update<R: Rng + ?Sized>(
        &self,
        model: &SourceModel<T>,
        q: &ConvexQuantizer<T>,
        symbol: usize,
        n_out: usize,
        mass_floor: T,
        rng: &mut R,
    ) -> Result<Self> {
        if model.dim() != self.dim || q.dim() != self.dim {
            return Err(ZdqError::DimensionMismatch {
                expected: self.dim,
                got: if model.dim() != self.dim { model.dim() } else { q.dim() },
            });
        }
        if symbol >= q.n_cells() {
            return Err(ZdqError::InvalidParameter(format!(
                "symbol {symbol} out of range for {} cells",
                q.n_cells()
            )));
        }
        if n_out == 0 {
            return Err(ZdqError::InvalidParameter("n_out must be positive".into()));
        }
        let d = self.dim;
        let mut parents = Vec::new();
        let mut parent_w = Vec::new();
        let mut mass = T::zero();
        for (x, w) in self.iter() {
            if w > T::zero() && q.encode(x) == symbol {
                parents.extend_from_slice(x);
                parent_w.push(w);
                mass = mass + w;
            }
        }
        if mass >= mass_floor && mass > T::zero() {
            for w in parent_w.iter_mut() {
                *w = *w / mass;
            }
        } else {
            match &self.predictive {
                Some(pred) => {
                    let (p, w) = condition_mixture(pred, model, q, symbol, n_out, rng).ok_or(
                        ZdqError::ImpossibleSymbol {
                            symbol,
                            mass: mass.to_f64().unwrap_or(0.0),
                        },
                    )?;
                    parents = p;
                    parent_w = w;
                }
                None => {
                    return Err(ZdqError::ImpossibleSymbol {
                        symbol,
                        mass: mass.to_f64().unwrap_or(0.0),
                    })
                }
            }
        }
        Ok(propagate(model, &parents, &parent_w, d, n_out, rng))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || &headers[0] != "w" {
            return Err(ZdqError::InvalidBelief("particle file must start with column w".into()));
        }
        let dim = headers.len() - 1;
        for (k, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x{}", k + 1) {
                return Err(ZdqError::InvalidBelief(format!("unexpected column {h:?}")));
            }
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<T> {
                let v: f64 = s.parse().map_err(|_| {
                    ZdqError::InvalidBelief(format!("row {}: cannot parse {s:?}", line + 1))
                })?;
                T::from_f64(v).ok_or(ZdqError::NonFinite("particle file"))
            };
            weights.push(parse(&rec[0])?);
            for k in 0..dim {
                points.push(parse(&rec[k + 1])?);
            }
        }
        Self::from_unnormalized(dim, points, weights)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        wtr.write_record(&header)?;
        for (x, w) in self.iter() {
            let mut row = vec![format_scalar(w)];
            row.extend(x.iter().map(|&v| format_scalar(v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal rendering.
pub(crate) fn format_scalar<T: Scalar>(v: T) -> String {
    format!("{}", v.to_f64().unwrap_or(f64::NAN))
}

/// Systematic resampling of the parents, each pushed through `A x + W`.
fn propagate<T: Scalar, R: Rng + ?Sized>(
    model: &SourceModel<T>,
    parents: &[T],
    parent_w: &[T],
    d: usize,
    n_out: usize,
    rng: &mut R,
) -> Belief<T> {
    let n_par = parent_w.len();
    let mut centers = vec![T::zero(); n_par * d];
    for j in 0..n_par {
        model
            .a()
            .mul_vec_into(&parents[j * d..(j + 1) * d], &mut centers[j * d..(j + 1) * d]);
    }
    let n = T::from_usize_lossy(n_out);
    let u0 = T::unit_uniform(rng) / n;
    let mut points = vec![T::zero(); n_out * d];
    let mut z = vec![T::zero(); d];
    let mut w = vec![T::zero(); d];
    let mut j = 0usize;
    let mut cum = parent_w[0];
    for k in 0..n_out {
        let u = u0 + T::from_usize_lossy(k) / n;
        while u >= cum && j + 1 < n_par {
            j += 1;
            cum = cum + parent_w[j];
        }
        model.noise().sample_into(rng, &mut z, &mut w);
        for r in 0..d {
            points[k * d + r] = centers[j * d + r] + w[r];
        }
    }
    let weight = T::one() / n;
    Belief {
        dim: d,
        points,
        weights: vec![weight; n_out],
        predictive: Some(Predictive {
            centers,
            weights: parent_w.to_vec(),
        }),
    }
}

fn log_sum_exp<T: Scalar>(terms: &[T]) -> T {
    let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<T>().ln()
}

/// Self-normalised importance sample of the mixture restricted to cell
/// `symbol`, using proposals with the noise covariance inflated by `s²` for
/// `s = 1, 2, 4, …` until the effective sample size reaches `min(n_out, 32)`.
fn condition_mixture<T: Scalar, R: Rng + ?Sized>(
    pred: &Predictive<T>,
    model: &SourceModel<T>,
    q: &ConvexQuantizer<T>,
    symbol: usize,
    n_out: usize,
    rng: &mut R,
) -> Option<(Vec<T>, Vec<T>)> {
    let d = model.dim();
    let l = model.noise().cholesky();
    let k = pred.weights.len();
    if k == 0 || l.as_slice().iter().all(|&v| v == T::zero()) {
        return None;
    }
    let log_w: Vec<T> = pred.weights.iter().map(|&w| w.ln()).collect();
    let mut cum = Vec::with_capacity(k);
    let mut acc = T::zero();
    for &w in &pred.weights {
        acc = acc + w;
        cum.push(acc);
    }
    let n_prop = (16 * n_out).max(256);
    let mut z = vec![T::zero(); d];
    let mut x = vec![T::zero(); d];
    let mut diff = vec![T::zero(); d];
    let mut white = vec![T::zero(); d];
    let mut lp_terms = vec![T::zero(); k];
    let mut lq_terms = vec![T::zero(); k];
    let half = T::lit(0.5);
    let target_ess = T::from_usize_lossy(n_out.min(32));
    let mut best: Option<(Vec<T>, Vec<T>, T)> = None;
    let mut scale = T::one();
    for _ in 0..8 {
        let mut pts = Vec::new();
        let mut log_iw = Vec::new();
        let inv_s2 = T::one() / (scale * scale);
        let log_norm = T::from_usize_lossy(d) * scale.ln();
        for _ in 0..n_prop {
            let u = T::unit_uniform(rng) * acc;
            let j = cum.partition_point(|&c| c <= u).min(k - 1);
            model.noise().sample_into(rng, &mut z, &mut x);
            for r in 0..d {
                x[r] = pred.centers[j * d + r] + scale * x[r];
            }
            if q.encode(&x) != symbol {
                continue;
            }
            for c in 0..k {
                for r in 0..d {
                    diff[r] = x[r] - pred.centers[c * d + r];
                }
                l.forward_solve_into(&diff, &mut white);
                let maha = sq_norm(&white);
                lp_terms[c] = log_w[c] - half * maha;
                lq_terms[c] = log_w[c] - half * maha * inv_s2;
            }
            pts.extend_from_slice(&x);
            log_iw.push(log_sum_exp(&lp_terms) - log_sum_exp(&lq_terms) + log_norm);
        }
        if !log_iw.is_empty() {
            let m = log_iw.iter().copied().fold(T::neg_infinity(), T::max);
            let w: Vec<T> = log_iw.iter().map(|&v| (v - m).exp()).collect();
            let total: T = w.iter().copied().sum();
            if total > T::zero() && total.is_finite() {
                let w: Vec<T> = w.into_iter().map(|v| v / total).collect();
                let ess = T::one() / w.iter().map(|&v| v * v).sum::<T>();
                let done = ess >= target_ess;
                if best.as_ref().is_none_or(|(_, _, e)| ess > *e) {
                    best = Some((pts, w, ess));
                }
                if done {
                    break;
                }
            }
        }
        scale = scale * T::lit(2.0);
    }
    best.map(|(p, w, _)| (p, w))
}
