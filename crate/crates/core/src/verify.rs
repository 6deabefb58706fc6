//! Monte Carlo and table checks of the closed-form bounds: second-moment
//! chain, discounted-cost cap, equicontinuity under coupling, the `1/T`
//! rate of the finite-horizon average, and receiver convergence.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::coding::{cell_centroid, evaluate_policy, mean_stderr, ordered_blocks, trajectory_costs, ClosedLoop};
use crate::error::{Result, ZdqError};
use crate::ot::optimal_coupling;
use crate::planner::BeliefCover;
use crate::policy::StationaryPolicy;
use crate::quantizer::ConvexQuantizer;
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::{sq_dist, sq_norm, Scalar};
use crate::source::{second_moment_bound, InitialDistribution, SourceModel};

/// Standard errors of slack granted to Monte Carlo estimates.
pub const SLACK_SE: f64 = 3.0;

/// `lhs ≤ rhs` up to `SLACK_SE` standard errors of the estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub stderr: f64,
    pub rhs: f64,
    /// `rhs + 3·stderr − lhs`.
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, lhs: f64, stderr: f64, rhs: f64) -> Self {
        let margin = rhs + SLACK_SE * stderr - lhs;
        Self {
            name: name.into(),
            lhs,
            stderr,
            rhs,
            margin,
            pass: margin >= 0.0,
        }
    }

    /// Passing only because of the statistical slack.
    pub fn is_tight(&self) -> bool {
        self.pass && self.margin < self.stderr
    }

    fn worst(name: &str, checks: impl IntoIterator<Item = BoundCheck>) -> BoundCheck {
        let mut worst: Option<BoundCheck> = None;
        let mut all_pass = true;
        for c in checks {
            all_pass &= c.pass;
            if worst.as_ref().is_none_or(|w| c.margin < w.margin) {
                worst = Some(c);
            }
        }
        let mut w = worst.unwrap_or_else(|| BoundCheck::new(name, 0.0, 0.0, 0.0));
        w.pass = all_pass;
        w
    }
}

pub fn write_checks_csv<W: Write>(checks: &[BoundCheck], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "lhs", "stderr", "rhs", "margin", "pass"])?;
    for c in checks {
        w.write_record([
            c.name.clone(),
            c.lhs.to_string(),
            c.stderr.to_string(),
            c.rhs.to_string(),
            c.margin.to_string(),
            c.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn f<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Constants of the bounds as functions of `(α, σ², m0)`; `m0` is the second
/// moment of the initial law the bound is stated for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants<T> {
    pub alpha: T,
    pub sigma_sq: T,
    pub m0: T,
}

impl<T: Scalar> BoundConstants<T> {
    pub fn new(model: &SourceModel<T>, m0: T) -> Self {
        Self {
            alpha: model.alpha(),
            sigma_sq: model.sigma_sq(),
            m0,
        }
    }

    /// `σ²/(1−α)`.
    pub fn noise_floor(&self) -> T {
        self.sigma_sq / (T::one() - self.alpha)
    }

    /// `K₂ = m0 + σ²/(1−α)`.
    pub fn k2(&self) -> T {
        self.m0 + self.noise_floor()
    }

    /// `K₁ = √K₂`.
    pub fn k1(&self) -> T {
        self.k2().sqrt()
    }

    /// `(m0 + σ²/(1−α)) / (1−β)`.
    pub fn discounted_cap(&self, beta: T) -> T {
        self.k2() / (T::one() - beta)
    }

    /// `(ρ₂/(1−α) + 2K₁/(1−√α))·ρ₂`.
    pub fn g(&self, rho2: T) -> T {
        let two = T::lit(2.0);
        (rho2 / (T::one() - self.alpha) + two * self.k1() / (T::one() - self.alpha.sqrt())) * rho2
    }

    /// `(2/(1−α))(m_π + m_μ) + (2K₁/(1−√α))·√(2m_π + 2m_μ)`.
    pub fn g1(&self, m_pi: T, m_mu: T) -> T {
        let two = T::lit(2.0);
        two / (T::one() - self.alpha) * (m_pi + m_mu)
            + two * self.k1() / (T::one() - self.alpha.sqrt()) * (two * m_pi + two * m_mu).sqrt()
    }

    /// `K(π₀) = (2/(1−α))(2m0 + σ²/(1−α)) + (2K₁/(1−√α))·√(4m0 + 2σ²/(1−α))`.
    pub fn rate_constant(&self) -> T {
        let two = T::lit(2.0);
        let floor = self.noise_floor();
        two / (T::one() - self.alpha) * (two * self.m0 + floor)
            + two * self.k1() / (T::one() - self.alpha.sqrt()) * (T::lit(4.0) * self.m0 + two * floor).sqrt()
    }
}

/// Monte Carlo `E‖X_t‖²` for `t ≤ horizon` against the second-moment chain.
///
/// `alpha_scale` multiplies the `α` fed to the formula; anything other than 1
/// is a deliberate corruption used as a negative control.
pub fn check_second_moment<T: Scalar>(
    model: &SourceModel<T>,
    init: &InitialDistribution<T>,
    horizon: usize,
    n_traj: usize,
    seed: u64,
    alpha_scale: T,
) -> Result<BoundCheck> {
    if n_traj == 0 {
        return Err(ZdqError::InvalidParameter("need at least one trajectory".into()));
    }
    let n = horizon + 1;
    let base = derive_seed(seed, "second-moment");
    let (sum, sum_sq) = ordered_blocks(
        n_traj,
        || (vec![T::zero(); n], vec![T::zero(); n]),
        |(s, ss), k| {
            let path = model.simulate_stream(init, horizon, base, k);
            for (t, x) in path.iter().enumerate() {
                let m = sq_norm(x);
                s[t] = s[t] + m;
                ss[t] = ss[t] + m * m;
            }
            Ok(())
        },
        |(s, ss), (bs, bss)| {
            s.iter_mut().zip(bs).for_each(|(a, b)| *a = *a + b);
            ss.iter_mut().zip(bss).for_each(|(a, b)| *a = *a + b);
        },
    )?;
    let m0 = init.second_moment();
    let alpha = model.alpha() * alpha_scale;
    let nf = T::from_usize_lossy(n_traj);
    let checks = (0..n).map(|t| {
        let (mean, se) = mean_stderr(sum[t], sum_sq[t], nf);
        let rhs = second_moment_bound(alpha, model.sigma_sq(), m0, t);
        BoundCheck::new(format!("second_moment[t={t}]"), f(mean), f(se), f(rhs))
    });
    Ok(BoundCheck::worst("second_moment", checks))
}

/// Truncated discounted closed-loop cost plus the geometric tail cap
/// `β^T (m0 + σ²/(1−α))/(1−β)`, against the discounted cap.
pub fn check_discounted_bound<T: Scalar>(
    model: &SourceModel<T>,
    policy: &StationaryPolicy<T>,
    init: &InitialDistribution<T>,
    beta: T,
    n_traj: usize,
    t_trunc: usize,
    seed: u64,
) -> Result<BoundCheck> {
    let consts = BoundConstants::new(model, init.second_moment());
    let rhs = consts.discounted_cap(beta);
    let report = evaluate_policy(model, policy, init, t_trunc, n_traj, derive_seed(seed, "discounted"), Some(beta))?;
    let (j, se) = report.discounted().unwrap_or((T::zero(), T::zero()));
    let tail = beta.powi(t_trunc as i32) * rhs;
    Ok(BoundCheck::new(format!("discounted_cost[beta={beta}]"), f(j + tail), f(se), f(rhs)))
}

/// Every value entry against the discounted cap of its own representative.
pub fn check_value_table<T: Scalar>(model: &SourceModel<T>, cover: &BeliefCover<T>, beta: T, values: &[T]) -> BoundCheck {
    let checks = cover.representatives().iter().zip(values).enumerate().map(|(k, (rep, &v))| {
        let rhs = BoundConstants::new(model, rep.moments().1).discounted_cap(beta);
        BoundCheck::new(format!("value_table[beta={beta},k={k}]"), f(v), 0.0, f(rhs))
    });
    BoundCheck::worst("value_table", checks)
}

/// Horizon after which `(√α β)^T` drops below `eps`.
fn coupling_horizon<T: Scalar>(alpha: T, beta: T, eps: T) -> usize {
    let r = alpha.sqrt() * beta;
    if r <= T::zero() {
        return 1;
    }
    let t = (eps.ln() / r.ln()).ceil();
    t.to_usize().unwrap_or(10_000).clamp(1, 10_000)
}

/// Coupled rollouts for the equicontinuity bound.
///
/// `(X₀, Y₀)` is drawn from the optimal coupling of `nu0` and `mu0`. The
/// `μ₀`-system runs `policy` and its decoder output `U_t` is reused for the
/// `ν₀`-system, whose state follows the same noise. The estimate is
/// `|E Σ β^t ‖X_t − U_t‖² − E Σ β^t ‖Y_t − U_t‖²|` plus a cap on the
/// truncated tail, compared with `g(ρ₂(ν₀, μ₀))` at `K₂ = E‖Y₀‖² + σ²/(1−α)`.
///
/// Returns the bound check followed by two pathwise checks: the identity
/// `Y_t − X_t = A^t(Y₀ − X₀)` (relative to the path scale) and the contraction
/// `‖X_t − Y_t‖² ≤ α^t ‖X₀ − Y₀‖²`.
#[allow(clippy::too_many_arguments)]
pub fn check_equicontinuity<T: Scalar>(
    model: &SourceModel<T>,
    nu0: &Belief<T>,
    mu0: &Belief<T>,
    beta: T,
    policy: &StationaryPolicy<T>,
    n_traj: usize,
    seed: u64,
    exact_budget: usize,
) -> Result<Vec<BoundCheck>> {
    if !(beta >= T::zero() && beta < T::one()) {
        return Err(ZdqError::InvalidParameter(format!("discount {beta} outside [0, 1)")));
    }
    if n_traj == 0 {
        return Err(ZdqError::InvalidParameter("need at least one trajectory".into()));
    }
    let plan = optimal_coupling(nu0, mu0, exact_budget)?;
    let rho2 = plan.cost.max(T::zero()).sqrt();
    let consts = BoundConstants::new(model, mu0.moments().1);
    let rhs = consts.g(rho2);
    let alpha = model.alpha();
    let horizon = coupling_horizon(alpha, beta, T::lit(1e-12));
    let ab = alpha * beta;
    let sab = alpha.sqrt() * beta;
    let tail = rho2 * rho2 * ab.powi(horizon as i32) / (T::one() - ab)
        + T::lit(2.0) * rho2 * consts.k1() * sab.powi(horizon as i32) / (T::one() - sab);
    let base = derive_seed(seed, "equicontinuity");
    let plan_weights: Vec<T> = plan.entries.iter().map(|e| e.2).collect();

    #[derive(Default)]
    struct Acc<T> {
        sum: T,
        sum_sq: T,
        identity_err: T,
        contraction: T,
    }
    let acc = ordered_blocks(
        n_traj,
        Acc::<T>::default,
        |acc, k| {
            let mut rng = stream_rng(derive_seed(base, "coupling"), k);
            let u = T::unit_uniform(&mut rng);
            let mut cum = T::zero();
            let mut pick = plan.entries.len() - 1;
            for (e, &w) in plan_weights.iter().enumerate() {
                cum = cum + w;
                if u < cum {
                    pick = e;
                    break;
                }
            }
            let (i, j, _) = plan.entries[pick];
            let mut x = nu0.point(i).to_vec();
            let y0 = mu0.point(j).to_vec();
            let mut gap: Vec<T> = y0.iter().zip(&x).map(|(&a, &b)| a - b).collect();
            let gap0_sq = sq_norm(&gap);
            let scale0 = gap0_sq.sqrt();
            let mut lp = ClosedLoop::with_state(model, policy, mu0.clone(), y0, base, k)?;
            let mut weight = T::one();
            let mut diff = T::zero();
            let mut alpha_t = T::one();
            for _ in 0..horizon {
                let r = lp.step()?;
                let y = &r.state;
                let dev: T = y
                    .iter()
                    .zip(&x)
                    .zip(&gap)
                    .map(|((&yi, &xi), &gi)| (yi - xi - gi) * (yi - xi - gi))
                    .sum::<T>()
                    .sqrt();
                let scale = scale0 + sq_norm(y).sqrt() + sq_norm(&x).sqrt();
                if scale > T::zero() {
                    acc.identity_err = acc.identity_err.max(dev / scale);
                }
                let d2 = sq_dist(y, &x);
                if gap0_sq > T::zero() {
                    let allowed = alpha_t * gap0_sq;
                    let excess = (d2 - allowed) / (gap0_sq * (T::one() + scale * scale));
                    acc.contraction = acc.contraction.max(excess);
                }
                diff = diff + weight * (sq_dist(&x, &r.reproduction) - sq_dist(y, &r.reproduction));
                weight = weight * beta;
                alpha_t = alpha_t * alpha;
                x = model.step_with_noise(&x, &r.noise);
                gap = model.a().mul_vec(&gap);
            }
            acc.sum = acc.sum + diff;
            acc.sum_sq = acc.sum_sq + diff * diff;
            Ok(())
        },
        |t, b| {
            t.sum = t.sum + b.sum;
            t.sum_sq = t.sum_sq + b.sum_sq;
            t.identity_err = t.identity_err.max(b.identity_err);
            t.contraction = t.contraction.max(b.contraction);
        },
    )?;
    let (mean, se) = mean_stderr(acc.sum, acc.sum_sq, T::from_usize_lossy(n_traj));
    Ok(vec![
        BoundCheck::new(format!("equicontinuity[beta={beta}]"), f(mean.abs() + tail), f(se), f(rhs)),
        BoundCheck::new("coupling_identity", f(acc.identity_err), 0.0, 1e-9),
        BoundCheck::new("coupling_contraction", f(acc.contraction), 0.0, 1e-9),
    ])
}

/// Pathwise gaps `‖X_t − Y_t‖` of two source copies driven by the same noise.
pub fn coupled_gaps<T: Scalar>(model: &SourceModel<T>, x0: &[T], y0: &[T], horizon: usize, seed: u64) -> Vec<T> {
    let mut rng = stream_rng(seed, 0);
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    let mut gaps = Vec::with_capacity(horizon + 1);
    gaps.push(sq_dist(&x, &y).sqrt());
    for _ in 0..horizon {
        let w = model.noise().sample(&mut rng);
        x = model.step_with_noise(&x, &w);
        y = model.step_with_noise(&y, &w);
        gaps.push(sq_dist(&x, &y).sqrt());
    }
    gaps
}

/// `T·|Ĵ_T − Ĵ∞|` over `t_grid` and the log-log slope of `|Ĵ_T − Ĵ∞|`.
///
/// `Ĵ∞` is the per-trajectory average over the window `[T_max, 8·T_max)`; the
/// differences are formed on each trajectory, so their standard errors
/// account for the shared paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub t_grid: Vec<usize>,
    pub j_t: Vec<f64>,
    pub j_inf: f64,
    pub deviation: Vec<f64>,
    pub deviation_stderr: Vec<f64>,
    pub rate_constant: f64,
    pub slope: Option<f64>,
}

pub fn rate_report<T: Scalar>(
    model: &SourceModel<T>,
    policy: &StationaryPolicy<T>,
    init: &InitialDistribution<T>,
    t_grid: &[usize],
    n_traj: usize,
    seed: u64,
) -> Result<RateReport> {
    if t_grid.is_empty() {
        return Err(ZdqError::InvalidParameter("empty T grid".into()));
    }
    if t_grid[0] == 0 || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ZdqError::InvalidParameter("T grid must be positive and increasing".into()));
    }
    if n_traj == 0 {
        return Err(ZdqError::InvalidParameter("need at least one trajectory".into()));
    }
    let t_max = *t_grid.last().unwrap_or(&1);
    let horizon = 8 * t_max;
    let g = t_grid.len();
    let base = derive_seed(seed, "rate");

    // Per grid point: sums of J_T, of D_T = J_T − J∞ and of D_T², then J∞.
    let acc = ordered_blocks(
        n_traj,
        || vec![T::zero(); 3 * g + 1],
        |acc, k| {
            let costs = trajectory_costs(model, policy, init, horizon, base, k)?;
            let tail = costs[t_max..].iter().copied().sum::<T>() / T::from_usize_lossy(horizon - t_max);
            let mut prefix = T::zero();
            let mut next = 0;
            for (t, &c) in costs.iter().enumerate() {
                prefix = prefix + c;
                if next < g && t + 1 == t_grid[next] {
                    let j = prefix / T::from_usize_lossy(t + 1);
                    let d = j - tail;
                    acc[3 * next] = acc[3 * next] + j;
                    acc[3 * next + 1] = acc[3 * next + 1] + d;
                    acc[3 * next + 2] = acc[3 * next + 2] + d * d;
                    next += 1;
                }
            }
            acc[3 * g] = acc[3 * g] + tail;
            Ok(())
        },
        |t, b| t.iter_mut().zip(b).for_each(|(a, b)| *a = *a + b),
    )?;
    let nf = T::from_usize_lossy(n_traj);
    let mut j_t = Vec::with_capacity(g);
    let mut deviation = Vec::with_capacity(g);
    let mut deviation_stderr = Vec::with_capacity(g);
    for i in 0..g {
        j_t.push(f(acc[3 * i] / nf));
        let (m, se) = mean_stderr(acc[3 * i + 1], acc[3 * i + 2], nf);
        deviation.push(f(m.abs()));
        deviation_stderr.push(f(se));
    }
    let consts = BoundConstants::new(model, init.second_moment());
    let slope = log_log_slope(t_grid, &deviation);
    Ok(RateReport {
        t_grid: t_grid.to_vec(),
        j_t,
        j_inf: f(acc[3 * g] / nf),
        deviation,
        deviation_stderr,
        rate_constant: f(consts.rate_constant()),
        slope,
    })
}

/// Least-squares slope of `ln y` on `ln t` over positive `y`; `None` with
/// fewer than two usable points.
pub fn log_log_slope(t: &[usize], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| ((t as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

impl RateReport {
    /// The rate bound (worst grid point) and the slope check. The slope check
    /// passes vacuously when every deviation is zero.
    pub fn checks(&self) -> Vec<BoundCheck> {
        let rate = self.t_grid.iter().zip(&self.deviation).zip(&self.deviation_stderr).map(|((&t, &d), &se)| {
            let tf = t as f64;
            BoundCheck::new(format!("rate[T={t}]"), tf * d, tf * se, self.rate_constant)
        });
        let rate = BoundCheck::worst("rate", rate);
        let slope = match self.slope {
            Some(s) => BoundCheck::new("rate_slope", s, 0.0, -0.8),
            None if self.deviation.iter().all(|&d| d == 0.0) => BoundCheck::new("rate_slope", -0.8, 0.0, -0.8),
            None => BoundCheck::new("rate_slope", f64::INFINITY, 0.0, -0.8),
        };
        vec![rate, slope]
    }
}

pub fn check_rate<T: Scalar>(
    model: &SourceModel<T>,
    policy: &StationaryPolicy<T>,
    init: &InitialDistribution<T>,
    t_grid: &[usize],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<BoundCheck>> {
    Ok(rate_report(model, policy, init, t_grid, n_traj, seed)?.checks())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverConvergence {
    /// `max_i ‖γ_n(i) − γ(i)‖` over cells with positive limit mass.
    pub gaps: Vec<f64>,
    pub pass: bool,
}

impl ReceiverConvergence {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(0.0)
    }
}

/// Centroid decoders along `(beliefs[n], quantizers[n])` against those of the limit.
pub fn check_receiver_convergence<T: Scalar>(
    beliefs: &[Belief<T>],
    quantizers: &[ConvexQuantizer<T>],
    limit_belief: &Belief<T>,
    limit_q: &ConvexQuantizer<T>,
) -> Result<ReceiverConvergence> {
    if beliefs.len() != quantizers.len() || beliefs.is_empty() {
        return Err(ZdqError::InvalidParameter("need equally long, non-empty sequences".into()));
    }
    let limit_mass = limit_belief.symbol_probs(limit_q);
    let live: Vec<usize> = (0..limit_q.n_cells()).filter(|&i| limit_mass[i] > T::zero()).collect();
    let limit: Vec<Vec<T>> = live.iter().map(|&i| cell_centroid(limit_belief, limit_q, i)).collect();
    let gaps: Vec<f64> = beliefs
        .par_iter()
        .zip(quantizers)
        .map(|(b, q)| {
            live.iter()
                .zip(&limit)
                .map(|(&i, u)| f(sq_dist(&cell_centroid(b, q, i), u).sqrt()))
                .fold(0.0, f64::max)
        })
        .collect();
    let pass = gaps.last().is_some_and(|&g| g < 1e-3);
    Ok(ReceiverConvergence { gaps, pass })
}

/// Knobs of the default verification suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteParams<T> {
    pub moment_horizon: usize,
    pub moment_traj: usize,
    pub betas: Vec<T>,
    pub n_traj: usize,
    pub t_trunc: usize,
    pub t_grid: Vec<usize>,
    pub exact_budget: usize,
    pub alpha_scale: T,
}

/// Runs every check of the suite, each on its own derived seed.
///
/// The equicontinuity check compares the initial law with a point mass at
/// the origin.
pub fn run_suite<T: Scalar>(
    model: &SourceModel<T>,
    policy: &StationaryPolicy<T>,
    init: &InitialDistribution<T>,
    value_table: Option<(T, &[T])>,
    params: &SuiteParams<T>,
    seed: u64,
) -> Result<Vec<BoundCheck>> {
    if params.t_grid.is_empty() {
        return Err(ZdqError::InvalidParameter("empty T grid".into()));
    }
    type Job<'a> = Box<dyn Fn() -> Result<Vec<BoundCheck>> + Send + Sync + 'a>;
    let mu0 = init.belief();
    let nu0 = Belief::point_mass(vec![T::zero(); model.dim()]);
    let mut jobs: Vec<Job<'_>> = Vec::new();
    jobs.push(Box::new(|| {
        Ok(vec![check_second_moment(
            model,
            init,
            params.moment_horizon,
            params.moment_traj,
            derive_seed(seed, "suite/second-moment"),
            params.alpha_scale,
        )?])
    }));
    if let Some((beta, values)) = value_table {
        jobs.push(Box::new(move || Ok(vec![check_value_table(model, policy.cover(), beta, values)])));
    }
    for &beta in &params.betas {
        jobs.push(Box::new(move || {
            Ok(vec![check_discounted_bound(
                model,
                policy,
                init,
                beta,
                params.n_traj,
                params.t_trunc,
                derive_seed(seed, &format!("suite/discounted/{beta}")),
            )?])
        }));
        let (nu0, mu0) = (&nu0, &mu0);
        jobs.push(Box::new(move || {
            check_equicontinuity(
                model,
                nu0,
                mu0,
                beta,
                policy,
                params.n_traj,
                derive_seed(seed, &format!("suite/equicontinuity/{beta}")),
                params.exact_budget,
            )
        }));
    }
    jobs.push(Box::new(|| {
        check_rate(model, policy, init, &params.t_grid, params.n_traj, derive_seed(seed, "suite/rate"))
    }));
    let results: Vec<Vec<BoundCheck>> = jobs.par_iter().map(|job| job()).collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}
