//! Finite belief cover, frozen transition kernel, discounted value iteration
//! and the vanishing-discount average-cost solution.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, FilterSettings};
use crate::coding::stage_cost;
use crate::error::{Result, ZdqError};
use crate::ot::{marginal_sq_lower_bound, network_transport, SortedLine};
use crate::quantizer::ConvexQuantizer;
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::source::{InitialDistribution, SourceModel};

#[derive(Clone, Debug)]
struct RepSummary<T> {
    marginals: Vec<SortedLine<T>>,
}

impl<T: Scalar> RepSummary<T> {
    fn new(b: &Belief<T>) -> Self {
        Self {
            marginals: (0..b.dim()).map(|r| SortedLine::marginal(b, r)).collect(),
        }
    }
}

/// Finite `ρ₂`-net of beliefs standing in for the belief space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "CoverRecord<T>", into = "CoverRecord<T>")]
pub struct BeliefCover<T> {
    reps: Vec<Belief<T>>,
    radius: T,
    provenance: String,
    exact_budget: usize,
    summaries: Vec<RepSummary<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct CoverRecord<T> {
    radius: T,
    provenance: String,
    exact_budget: usize,
    representatives: Vec<Belief<T>>,
}

impl<T: Scalar> TryFrom<CoverRecord<T>> for BeliefCover<T> {
    type Error = ZdqError;
    fn try_from(r: CoverRecord<T>) -> Result<Self> {
        BeliefCover::new(r.representatives, r.radius, r.provenance, r.exact_budget)
    }
}

impl<T: Scalar> From<BeliefCover<T>> for CoverRecord<T> {
    fn from(c: BeliefCover<T>) -> Self {
        CoverRecord {
            radius: c.radius,
            provenance: c.provenance,
            exact_budget: c.exact_budget,
            representatives: c.reps,
        }
    }
}

impl<T: Scalar> PartialEq for BeliefCover<T> {
    fn eq(&self, other: &Self) -> bool {
        self.radius == other.radius
            && self.provenance == other.provenance
            && self.reps.len() == other.reps.len()
            && self.reps.iter().zip(&other.reps).all(|(a, b)| a.same_measure(b))
    }
}

impl<T: Scalar> BeliefCover<T> {
    pub fn new(reps: Vec<Belief<T>>, radius: T, provenance: String, exact_budget: usize) -> Result<Self> {
        if reps.is_empty() {
            return Err(ZdqError::EmptyBeliefs);
        }
        let d = reps[0].dim();
        if let Some(b) = reps.iter().find(|b| b.dim() != d) {
            return Err(ZdqError::DimensionMismatch {
                expected: d,
                got: b.dim(),
            });
        }
        if !(radius > T::zero()) {
            return Err(ZdqError::InvalidParameter("cover radius must be positive".into()));
        }
        let summaries = reps.iter().map(RepSummary::new).collect();
        Ok(Self {
            reps,
            radius,
            provenance,
            exact_budget,
            summaries,
        })
    }

    pub fn representatives(&self) -> &[Belief<T>] {
        &self.reps
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.reps[0].dim()
    }

    fn push(&mut self, b: Belief<T>) {
        self.summaries.push(RepSummary::new(&b));
        self.reps.push(b);
    }

    fn exact_sq(&self, k: usize, query: &Belief<T>) -> Result<T> {
        let size = query.len().max(self.reps[k].len());
        if size > self.exact_budget {
            return Err(ZdqError::BudgetExceeded {
                what: "exact transport support",
                size,
                budget: self.exact_budget,
            });
        }
        Ok(network_transport(query, &self.reps[k]).cost)
    }

    /// Nearest representative under `ρ₂` (lowest index on ties) and the distance.
    ///
    /// Candidates are screened by the marginal lower bound, which already is
    /// the exact distance in one dimension.
    pub fn nearest(&self, query: &Belief<T>) -> Result<(usize, T)> {
        if query.dim() != self.dim() {
            return Err(ZdqError::DimensionMismatch {
                expected: self.dim(),
                got: query.dim(),
            });
        }
        let q = RepSummary::new(query);
        let lbs: Vec<T> = self
            .summaries
            .iter()
            .map(|s| marginal_sq_lower_bound(&q.marginals, &s.marginals))
            .collect();
        if self.dim() == 1 {
            let best = lbs
                .iter()
                .enumerate()
                .fold(0, |best, (k, &d)| if d < lbs[best] { k } else { best });
            return Ok((best, lbs[best].max(T::zero()).sqrt()));
        }
        let mut order: Vec<usize> = (0..lbs.len()).collect();
        order.sort_by(|&i, &j| lbs[i].partial_cmp(&lbs[j]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
        let mut best = order[0];
        let mut best_sq = self.exact_sq(best, query)?;
        let slack = T::lit(1e-12);
        for &k in &order[1..] {
            // Candidates come in increasing bound order, so nothing later can win.
            if lbs[k] > best_sq * (T::one() + slack) + T::epsilon() {
                break;
            }
            let d = self.exact_sq(k, query)?;
            if d < best_sq || (d == best_sq && k < best) {
                best = k;
                best_sq = d;
            }
        }
        Ok((best, best_sq.max(T::zero()).sqrt()))
    }
}

/// Knobs for [`build_cover`].
#[derive(Clone, Debug, PartialEq)]
pub struct CoverSpec<T> {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub radius: T,
    pub cap: usize,
}

/// Runs closed loops with uniformly random actions from `init`, archives every
/// filtered belief, and keeps a greedy net: an archived belief becomes a new
/// representative iff it is farther than `radius` from all current ones.
/// Representative 0 is always the initial belief.
pub fn build_cover<T: Scalar>(
    model: &SourceModel<T>,
    actions: &[ConvexQuantizer<T>],
    init: &InitialDistribution<T>,
    spec: &CoverSpec<T>,
    settings: &FilterSettings<T>,
    seed: u64,
) -> Result<BeliefCover<T>> {
    if actions.is_empty() && spec.n_rollouts > 0 {
        return Err(ZdqError::InvalidParameter("cover rollouts need at least one action".into()));
    }
    let archive: Vec<Vec<Belief<T>>> = (0..spec.n_rollouts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r);
            let mut x = init.sample(&mut rng);
            let mut belief = init.belief();
            let mut visited = Vec::with_capacity(spec.horizon);
            for _ in 0..spec.horizon {
                let q = &actions[rng.random_range(0..actions.len())];
                let symbol = q.encode(&x);
                belief = belief.filter_update(model, q, symbol, settings.n_particles, settings.mass_floor, &mut rng)?;
                x = model.step(&x, &mut rng);
                visited.push(belief.clone());
            }
            Ok(visited)
        })
        .collect::<Result<_>>()?;
    let provenance = format!(
        "greedy net over {} random-action rollouts of length {} (seed {seed})",
        spec.n_rollouts, spec.horizon
    );
    let mut cover = BeliefCover::new(vec![init.belief()], spec.radius, provenance, settings.exact_budget)?;
    for b in archive.into_iter().flatten() {
        let (_, dist) = cover.nearest(&b)?;
        if dist > spec.radius {
            cover.push(b);
            if cover.len() > spec.cap {
                return Err(ZdqError::BudgetExceeded {
                    what: "belief cover",
                    size: cover.len(),
                    budget: spec.cap,
                });
            }
        }
    }
    Ok(cover)
}

/// Finite MDP over cover representatives: per `(state, action)` a stage cost
/// and a distribution over next states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FrozenKernel<T> {
    n_states: usize,
    n_actions: usize,
    costs: Vec<T>,
    transitions: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> FrozenKernel<T> {
    /// `costs[s][a]` and `transitions[s][a] = [(next, prob)]`.
    pub fn from_parts(costs: Vec<Vec<T>>, transitions: Vec<Vec<Vec<(usize, T)>>>) -> Result<Self> {
        let n_states = costs.len();
        if n_states == 0 || transitions.len() != n_states {
            return Err(ZdqError::InvalidParameter("kernel needs matching, non-empty state lists".into()));
        }
        let n_actions = costs[0].len();
        if n_actions == 0 {
            return Err(ZdqError::InvalidParameter("kernel needs at least one action".into()));
        }
        let mut flat_costs = Vec::with_capacity(n_states * n_actions);
        let mut flat_trans = Vec::with_capacity(n_states * n_actions);
        for (c_row, t_row) in costs.into_iter().zip(transitions) {
            if c_row.len() != n_actions || t_row.len() != n_actions {
                return Err(ZdqError::InvalidParameter("ragged kernel".into()));
            }
            for (c, t) in c_row.into_iter().zip(t_row) {
                if !(c >= T::zero()) || !c.is_finite() {
                    return Err(ZdqError::InvalidParameter("stage costs must be finite and >= 0".into()));
                }
                let total: T = t.iter().map(|&(_, p)| p).sum();
                if t.iter().any(|&(s, p)| s >= n_states || p < T::zero())
                    || (total - T::one()).abs() > T::lit(1e-9)
                {
                    return Err(ZdqError::InvalidParameter("transition row is not a distribution".into()));
                }
                flat_costs.push(c);
                flat_trans.push(t);
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            costs: flat_costs,
            transitions: flat_trans,
        })
    }

    /// Freezes the belief MDP on `cover` × `actions`: every symbol with
    /// probability at least the mass floor gets one filtered next belief
    /// (fixed seed per pair), projected onto its nearest representative.
    /// Kept symbol probabilities are renormalised.
    pub fn freeze(
        model: &SourceModel<T>,
        cover: &BeliefCover<T>,
        actions: &[ConvexQuantizer<T>],
        settings: &FilterSettings<T>,
        seed: u64,
    ) -> Result<Self> {
        if actions.is_empty() {
            return Err(ZdqError::InvalidParameter("empty action library".into()));
        }
        let n_actions = actions.len();
        let pairs: Vec<(T, Vec<(usize, T)>)> = (0..cover.len() * n_actions)
            .into_par_iter()
            .map(|idx| {
                let (k, a) = (idx / n_actions, idx % n_actions);
                let rep = &cover.representatives()[k];
                let q = &actions[a];
                let cost = stage_cost(rep, q);
                let probs = rep.symbol_probs(q);
                let mut rng = stream_rng(seed, idx as u64);
                let mut next: Vec<(usize, T)> = Vec::new();
                for (i, &p) in probs.iter().enumerate() {
                    if p < settings.mass_floor || p <= T::zero() {
                        continue;
                    }
                    let b = rep.filter_update(model, q, i, settings.n_particles, settings.mass_floor, &mut rng)?;
                    let (j, _) = cover.nearest(&b)?;
                    match next.iter_mut().find(|(s, _)| *s == j) {
                        Some(e) => e.1 = e.1 + p,
                        None => next.push((j, p)),
                    }
                }
                let total: T = next.iter().map(|&(_, p)| p).sum();
                for e in next.iter_mut() {
                    e.1 = e.1 / total;
                }
                next.sort_by_key(|&(s, _)| s);
                Ok((cost, next))
            })
            .collect::<Result<_>>()?;
        let (costs, transitions) = pairs.into_iter().unzip();
        Ok(Self {
            n_states: cover.len(),
            n_actions,
            costs,
            transitions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn cost(&self, s: usize, a: usize) -> T {
        self.costs[s * self.n_actions + a]
    }

    #[inline]
    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, T)] {
        &self.transitions[s * self.n_actions + a]
    }

    /// `c(s, a) + scale · Σ p(s'|s,a) v(s')`.
    #[inline]
    pub fn q_value(&self, s: usize, a: usize, v: &[T], scale: T) -> T {
        let ev = self
            .transitions(s, a)
            .iter()
            .fold(T::zero(), |acc, &(n, p)| acc + p * v[n]);
        self.cost(s, a) + scale * ev
    }

    fn greedy_at(&self, s: usize, v: &[T], scale: T) -> (T, usize) {
        let mut best = self.q_value(s, 0, v, scale);
        let mut arg = 0;
        for a in 1..self.n_actions {
            let q = self.q_value(s, a, v, scale);
            if q < best {
                best = q;
                arg = a;
            }
        }
        (best, arg)
    }
}

/// Value function on the cover with its greedy action map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValueTable<T> {
    pub beta: T,
    pub values: Vec<T>,
    pub greedy: Vec<usize>,
    pub iterations: usize,
    pub sup_residual: T,
    pub converged: bool,
}

impl<T: Scalar> ValueTable<T> {
    pub fn zeros(beta: T, n_states: usize) -> Self {
        Self {
            beta,
            values: vec![T::zero(); n_states],
            greedy: vec![0; n_states],
            iterations: 0,
            sup_residual: T::infinity(),
            converged: false,
        }
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(ZdqError::NotConverged {
                residual: self.sup_residual.to_f64().unwrap_or(f64::NAN),
                iterations: self.iterations,
            })
        }
    }
}

/// One application of `(Hv)(s) = min_a [c(s,a) + β Σ p(s'|s,a) v(s')]`;
/// ties go to the lowest action index.
pub fn bellman_backup<T: Scalar>(table: &ValueTable<T>, kernel: &FrozenKernel<T>) -> ValueTable<T> {
    let beta = table.beta;
    let v = &table.values;
    let backed: Vec<(T, usize)> = if kernel.n_states * kernel.n_actions >= 4096 {
        (0..kernel.n_states)
            .into_par_iter()
            .map(|s| kernel.greedy_at(s, v, beta))
            .collect()
    } else {
        (0..kernel.n_states).map(|s| kernel.greedy_at(s, v, beta)).collect()
    };
    let mut residual = T::zero();
    for (new, old) in backed.iter().zip(v) {
        residual = residual.max((new.0 - *old).abs());
    }
    ValueTable {
        beta,
        values: backed.iter().map(|b| b.0).collect(),
        greedy: backed.iter().map(|b| b.1).collect(),
        iterations: table.iterations + 1,
        sup_residual: residual,
        converged: false,
    }
}

/// Iterates the backup from `v = 0` until `sup|v_{n+1} − v_n| ≤ tol·(1−β)/(2β)`,
/// which puts the returned values within `tol/2` of the fixed point.
/// A table that hits `max_iter` first comes back with `converged = false`.
pub fn value_iteration<T: Scalar>(kernel: &FrozenKernel<T>, beta: T, tol: T, max_iter: usize) -> Result<ValueTable<T>> {
    if !(beta >= T::zero() && beta < T::one()) {
        return Err(ZdqError::InvalidParameter(format!("discount {beta} outside [0, 1)")));
    }
    let threshold = if beta == T::zero() {
        T::infinity()
    } else {
        tol * (T::one() - beta) / (T::lit(2.0) * beta)
    };
    let n = kernel.n_states;
    let mut values = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut greedy = vec![0usize; n];
    let mut iterations = 0;
    let mut residual = T::infinity();
    let mut converged = false;
    while iterations < max_iter {
        residual = T::zero();
        for s in 0..n {
            let (v, a) = kernel.greedy_at(s, &values, beta);
            residual = residual.max((v - values[s]).abs());
            next[s] = v;
            greedy[s] = a;
        }
        std::mem::swap(&mut values, &mut next);
        iterations += 1;
        if residual <= threshold {
            converged = true;
            break;
        }
    }
    Ok(ValueTable {
        beta,
        values,
        greedy,
        iterations,
        sup_residual: residual,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AverageCostSolution<T> {
    pub rho_star: T,
    /// Relative values `J^β(·) − J^β(μ)` at the last discount.
    pub h: Vec<T>,
    /// Greedy action per representative at the last discount.
    pub greedy: Vec<usize>,
    pub reference: usize,
    pub beta_schedule: Vec<T>,
    /// `(1 − β) J^β(μ)` for each discount in the schedule.
    pub rho_trend: Vec<T>,
    pub iterations: Vec<usize>,
    pub last_table: ValueTable<T>,
    pub acoe_residual: T,
    pub converged: bool,
}

/// Solves the discounted problem along an increasing discount schedule and
/// reads off `ρ* = (1 − β_last) J^{β_last}(μ)` and `h = J^{β_last} − J^{β_last}(μ)`.
pub fn vanishing_discount<T: Scalar>(
    kernel: &FrozenKernel<T>,
    beta_schedule: &[T],
    reference: usize,
    tol: T,
    max_iter: usize,
) -> Result<AverageCostSolution<T>> {
    if beta_schedule.is_empty() {
        return Err(ZdqError::InvalidParameter("empty discount schedule".into()));
    }
    if beta_schedule.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ZdqError::InvalidParameter("discount schedule must increase".into()));
    }
    if reference >= kernel.n_states {
        return Err(ZdqError::InvalidParameter(format!(
            "reference state {reference} outside {} states",
            kernel.n_states
        )));
    }
    let mut rho_trend = Vec::with_capacity(beta_schedule.len());
    let mut iterations = Vec::with_capacity(beta_schedule.len());
    let mut converged = true;
    let mut last = None;
    for &beta in beta_schedule {
        if !(beta > T::zero() && beta < T::one()) {
            return Err(ZdqError::InvalidParameter(format!("discount {beta} outside (0, 1)")));
        }
        let table = value_iteration(kernel, beta, tol, max_iter)?;
        converged &= table.converged;
        rho_trend.push((T::one() - beta) * table.values[reference]);
        iterations.push(table.iterations);
        last = Some(table);
    }
    let table = last.expect("non-empty schedule");
    let j_ref = table.values[reference];
    let rho_star = (T::one() - table.beta) * j_ref;
    let h: Vec<T> = table.values.iter().map(|&v| v - j_ref).collect();
    let acoe = acoe_residual_of(kernel, rho_star, &h);
    Ok(AverageCostSolution {
        rho_star,
        h,
        greedy: table.greedy.clone(),
        reference,
        beta_schedule: beta_schedule.to_vec(),
        rho_trend,
        iterations,
        last_table: table,
        acoe_residual: acoe,
        converged,
    })
}

/// `max_s |ρ + h(s) − min_a [c(s,a) + Σ p(s'|s,a) h(s')]|`.
pub fn acoe_residual_of<T: Scalar>(kernel: &FrozenKernel<T>, rho: T, h: &[T]) -> T {
    (0..kernel.n_states).fold(T::zero(), |m, s| {
        let (rhs, _) = kernel.greedy_at(s, h, T::one());
        m.max((rho + h[s] - rhs).abs())
    })
}

pub fn acoe_residual<T: Scalar>(sol: &AverageCostSolution<T>, kernel: &FrozenKernel<T>) -> T {
    acoe_residual_of(kernel, sol.rho_star, &sol.h)
}
