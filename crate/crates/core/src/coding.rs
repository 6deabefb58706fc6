//! Centroid decoders, stage cost, and closed-loop rollouts of a stationary policy.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{Result, ZdqError};
use crate::policy::StationaryPolicy;
use crate::quantizer::ConvexQuantizer;
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::scalar::{sq_dist, Scalar};
use crate::source::{InitialDistribution, SourceModel};

/// One reproduction point per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Codebook<T> {
    dim: usize,
    points: Vec<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(dim: usize, points: Vec<T>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(ZdqError::InvalidParameter("codebook needs M·d entries".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(ZdqError::NonFinite("codebook"));
        }
        Ok(Self { dim, points })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Sum of `Σ_{x_j ∈ cell i} w_j ‖x_j − u_i‖²` over cells.
    pub fn distortion(&self, belief: &Belief<T>, q: &ConvexQuantizer<T>) -> T {
        belief
            .iter()
            .map(|(x, w)| w * sq_dist(x, self.point(q.encode(x))))
            .sum()
    }
}

/// Per-cell conditional means; cells without mass keep their site.
pub fn optimal_decoder<T: Scalar>(belief: &Belief<T>, q: &ConvexQuantizer<T>) -> Codebook<T> {
    let d = q.dim();
    let m = q.n_cells();
    let mut sums = vec![T::zero(); m * d];
    let mut mass = vec![T::zero(); m];
    for (x, w) in belief.iter() {
        let i = q.encode(x);
        mass[i] = mass[i] + w;
        for (s, &xi) in sums[i * d..(i + 1) * d].iter_mut().zip(x) {
            *s = *s + w * xi;
        }
    }
    for i in 0..m {
        let cell = &mut sums[i * d..(i + 1) * d];
        if mass[i] > T::zero() {
            cell.iter_mut().for_each(|s| *s = *s / mass[i]);
        } else {
            cell.copy_from_slice(q.site(i));
        }
    }
    Codebook { dim: d, points: sums }
}

/// Conditional mean of the belief over one cell (the site if the cell is empty).
pub fn cell_centroid<T: Scalar>(belief: &Belief<T>, q: &ConvexQuantizer<T>, symbol: usize) -> Vec<T> {
    let mut sum = vec![T::zero(); q.dim()];
    let mut mass = T::zero();
    for (x, w) in belief.iter() {
        if q.encode(x) == symbol {
            mass = mass + w;
            for (s, &xi) in sum.iter_mut().zip(x) {
                *s = *s + w * xi;
            }
        }
    }
    if mass > T::zero() {
        sum.iter_mut().for_each(|s| *s = *s / mass);
        sum
    } else {
        q.site(symbol).to_vec()
    }
}

/// Expected squared error of the best decoder: total within-cell variance.
pub fn stage_cost<T: Scalar>(belief: &Belief<T>, q: &ConvexQuantizer<T>) -> T {
    optimal_decoder(belief, q).distortion(belief, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub t: usize,
    pub representative: usize,
    pub action: usize,
    pub symbol: usize,
    pub state: Vec<T>,
    pub reproduction: Vec<T>,
    pub cost: T,
    /// Source noise that produced the next state.
    pub noise: Vec<T>,
}

/// Encoder and decoder of a stationary policy run against one source path.
///
/// Both sides keep their own filter fed by the symbol stream and identical
/// random streams; their beliefs are compared bit for bit before every step.
pub struct ClosedLoop<'a, T: Scalar> {
    model: &'a SourceModel<T>,
    policy: &'a StationaryPolicy<T>,
    x: Vec<T>,
    encoder: Belief<T>,
    decoder: Belief<T>,
    source_rng: StreamRng,
    filter_rng: StreamRng,
    z: Vec<T>,
    t: usize,
}

impl<'a, T: Scalar> ClosedLoop<'a, T> {
    /// Draws `X₀` from `init` on the trajectory's own stream.
    pub fn new(
        model: &'a SourceModel<T>,
        policy: &'a StationaryPolicy<T>,
        init: &InitialDistribution<T>,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let mut source_rng = stream_rng(derive_seed(seed, "source"), stream);
        let x0 = init.sample(&mut source_rng);
        Self::from_state(model, policy, init.belief(), x0, seed, stream, source_rng)
    }

    /// Starts from a given `X₀` with prior belief `prior`.
    pub fn with_state(
        model: &'a SourceModel<T>,
        policy: &'a StationaryPolicy<T>,
        prior: Belief<T>,
        x0: Vec<T>,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let source_rng = stream_rng(derive_seed(seed, "source"), stream);
        Self::from_state(model, policy, prior, x0, seed, stream, source_rng)
    }

    fn from_state(
        model: &'a SourceModel<T>,
        policy: &'a StationaryPolicy<T>,
        prior: Belief<T>,
        x0: Vec<T>,
        seed: u64,
        stream: u64,
        source_rng: StreamRng,
    ) -> Result<Self> {
        policy.check_model(model)?;
        if prior.dim() != model.dim() || x0.len() != model.dim() {
            return Err(ZdqError::DimensionMismatch {
                expected: model.dim(),
                got: if prior.dim() != model.dim() { prior.dim() } else { x0.len() },
            });
        }
        Ok(Self {
            model,
            policy,
            x: x0,
            decoder: prior.clone(),
            encoder: prior,
            source_rng,
            filter_rng: stream_rng(derive_seed(seed, "filter"), stream),
            z: vec![T::zero(); model.dim()],
            t: 0,
        })
    }

    pub fn state(&self) -> &[T] {
        &self.x
    }

    pub fn belief(&self) -> &Belief<T> {
        &self.encoder
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn step(&mut self) -> Result<StepRecord<T>> {
        if !self.encoder.same_measure(&self.decoder) {
            return Err(ZdqError::Desync { t: self.t });
        }
        let (rep, action) = self.policy.action_for(&self.encoder)?;
        let q = &self.policy.actions()[action];
        let symbol = q.encode(&self.x);

        let reproduction = cell_centroid(&self.decoder, q, symbol);
        let cost = sq_dist(&self.x, &reproduction);

        let settings = self.policy.settings();
        let mut decoder_rng = self.filter_rng.clone();
        let next_enc = self.encoder.filter_update(
            self.model,
            q,
            symbol,
            settings.n_particles,
            settings.mass_floor,
            &mut self.filter_rng,
        )?;
        let next_dec = self.decoder.filter_update(
            self.model,
            q,
            symbol,
            settings.n_particles,
            settings.mass_floor,
            &mut decoder_rng,
        )?;

        let mut noise = vec![T::zero(); self.model.dim()];
        self.model.noise().sample_into(&mut self.source_rng, &mut self.z, &mut noise);
        let next_x = self.model.step_with_noise(&self.x, &noise);

        let record = StepRecord {
            t: self.t,
            representative: rep,
            action,
            symbol,
            state: std::mem::replace(&mut self.x, next_x),
            reproduction,
            cost,
            noise,
        };
        self.encoder = next_enc;
        self.decoder = next_dec;
        self.t += 1;
        Ok(record)
    }
}

/// Per-step distortions `‖X_t − U_t‖²`, `t = 0..horizon`.
pub fn trajectory_costs<T: Scalar>(
    model: &SourceModel<T>,
    policy: &StationaryPolicy<T>,
    init: &InitialDistribution<T>,
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<T>> {
    let mut lp = ClosedLoop::new(model, policy, init, seed, stream)?;
    (0..horizon).map(|_| lp.step().map(|r| r.cost)).collect()
}

/// Trajectories are reduced in fixed-size blocks so totals do not depend on
/// the number of worker threads.
pub(crate) const BLOCK: usize = 64;

/// Runs `per_traj(k)` for `k = 0..n` in parallel and folds results in index order.
pub(crate) fn ordered_blocks<A, F, G>(n: usize, init: impl Fn() -> A + Sync, per_traj: F, merge: G) -> Result<A>
where
    A: Send,
    F: Fn(&mut A, u64) -> Result<()> + Sync,
    G: Fn(&mut A, A),
{
    let blocks: Vec<A> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for k in b * BLOCK..((b + 1) * BLOCK).min(n) {
                per_traj(&mut acc, k as u64)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = init();
    for b in blocks {
        merge(&mut total, b);
    }
    Ok(total)
}

#[derive(Clone, Debug, Default)]
struct Moments<T> {
    sum: Vec<T>,
    sum_sq: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![T::zero(); n],
            sum_sq: vec![T::zero(); n],
        }
    }

    fn add(&mut self, t: usize, v: T) {
        self.sum[t] = self.sum[t] + v;
        self.sum_sq[t] = self.sum_sq[t] + v * v;
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a = *a + *b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a = *a + *b;
        }
    }

    fn mean_stderr(&self, n: usize) -> (Vec<T>, Vec<T>) {
        let nf = T::from_usize_lossy(n);
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &ss)| mean_stderr(s, ss, nf))
            .unzip()
    }
}

pub(crate) fn mean_stderr<T: Scalar>(sum: T, sum_sq: T, n: T) -> (T, T) {
    let mean = sum / n;
    if n <= T::one() {
        return (mean, T::zero());
    }
    let var = ((sum_sq - n * mean * mean) / (n - T::one())).max(T::zero());
    (mean, (var / n).sqrt())
}

/// Monte Carlo summary of closed-loop distortion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CostReport<T> {
    pub horizon: usize,
    pub n_trajectories: usize,
    pub beta: Option<T>,
    /// `E‖X_t − U_t‖²` for `t = 0..horizon`.
    pub mean_cost: Vec<T>,
    pub stderr: Vec<T>,
    /// Entry `t` is `E[(1/(t+1)) Σ_{s≤t} c_s]`.
    pub running_avg: Vec<T>,
    pub running_avg_stderr: Vec<T>,
    /// Entry `t` is `E[Σ_{s≤t} β^s c_s]`, present when a discount was given.
    pub discounted_partial: Option<Vec<T>>,
    pub discounted_stderr: Option<Vec<T>>,
}

impl<T: Scalar> CostReport<T> {
    /// `J(π₀, T)`, the average over the full horizon.
    pub fn average(&self) -> Option<T> {
        self.running_avg.last().copied()
    }

    pub fn average_at(&self, t: usize) -> Option<(T, T)> {
        (t >= 1 && t <= self.horizon).then(|| (self.running_avg[t - 1], self.running_avg_stderr[t - 1]))
    }

    pub fn discounted(&self) -> Option<(T, T)> {
        Some((
            *self.discounted_partial.as_ref()?.last()?,
            *self.discounted_stderr.as_ref()?.last()?,
        ))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mean_cost", "stderr", "running_avg", "discounted_partial"])?;
        for t in 0..self.horizon {
            let disc = self
                .discounted_partial
                .as_ref()
                .map(|d| crate::belief::format_scalar(d[t]))
                .unwrap_or_default();
            w.write_record([
                t.to_string(),
                crate::belief::format_scalar(self.mean_cost[t]),
                crate::belief::format_scalar(self.stderr[t]),
                crate::belief::format_scalar(self.running_avg[t]),
                disc,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct EvalAcc<T> {
    cost: Moments<T>,
    avg: Moments<T>,
    disc: Moments<T>,
}

/// Closed-loop Monte Carlo over `n_trajectories` independent streams.
pub fn evaluate_policy<T: Scalar>(
    model: &SourceModel<T>,
    policy: &StationaryPolicy<T>,
    init: &InitialDistribution<T>,
    horizon: usize,
    n_trajectories: usize,
    seed: u64,
    beta: Option<T>,
) -> Result<CostReport<T>> {
    if n_trajectories == 0 {
        return Err(ZdqError::InvalidParameter("need at least one trajectory".into()));
    }
    if let Some(b) = beta {
        if !(b >= T::zero() && b < T::one()) {
            return Err(ZdqError::InvalidParameter(format!("discount {b} outside [0, 1)")));
        }
    }
    let disc_len = if beta.is_some() { horizon } else { 0 };
    let acc = ordered_blocks(
        n_trajectories,
        || EvalAcc {
            cost: Moments::new(horizon),
            avg: Moments::new(horizon),
            disc: Moments::new(disc_len),
        },
        |acc, k| {
            let costs = trajectory_costs(model, policy, init, horizon, seed, k)?;
            let mut prefix = T::zero();
            let mut disc = T::zero();
            let mut weight = T::one();
            for (t, &c) in costs.iter().enumerate() {
                acc.cost.add(t, c);
                prefix = prefix + c;
                acc.avg.add(t, prefix / T::from_usize_lossy(t + 1));
                if let Some(b) = beta {
                    disc = disc + weight * c;
                    weight = weight * b;
                    acc.disc.add(t, disc);
                }
            }
            Ok(())
        },
        |total, block| {
            total.cost.merge(&block.cost);
            total.avg.merge(&block.avg);
            total.disc.merge(&block.disc);
        },
    )?;
    let (mean_cost, stderr) = acc.cost.mean_stderr(n_trajectories);
    let (running_avg, running_avg_stderr) = acc.avg.mean_stderr(n_trajectories);
    let (discounted_partial, discounted_stderr) = match beta {
        Some(_) => {
            let (m, s) = acc.disc.mean_stderr(n_trajectories);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(CostReport {
        horizon,
        n_trajectories,
        beta,
        mean_cost,
        stderr,
        running_avg,
        running_avg_stderr,
        discounted_partial,
        discounted_stderr,
    })
}
