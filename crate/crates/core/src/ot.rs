//! Order-2 Wasserstein distance between discrete beliefs.
//!
//! * `d = 1`: the monotone (quantile) coupling is optimal for convex costs, so
//!   the exact distance is a merge of the two sorted supports.
//! * `d ≥ 2`: exact transport by successive shortest augmenting paths with
//!   node potentials on the dense bipartite graph, up to a support budget.
//! * Above the budget a sliced estimate can be requested explicitly; it is a
//!   lower bound and is always flagged as approximate.

use rand::Rng;

use crate::belief::Belief;
use crate::error::{Result, ZdqError};
use crate::rng::stream_rng;
use crate::scalar::{sq_dist, Scalar};

pub const DEFAULT_EXACT_BUDGET: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fallback {
    /// Refuse with `BudgetExceeded`.
    Error,
    /// Sliced estimate over random directions.
    Sliced { projections: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtOptions {
    /// Largest support size (per measure) handed to the exact network solver.
    pub exact_budget: usize,
    pub fallback: Fallback,
}

impl Default for OtOptions {
    fn default() -> Self {
        Self {
            exact_budget: DEFAULT_EXACT_BUDGET,
            fallback: Fallback::Error,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct W2Estimate<T> {
    pub value: T,
    pub approximate: bool,
}

/// Coupling as a sparse list of `(i, j, mass)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<T> {
    pub entries: Vec<(usize, usize, T)>,
    /// `Σ mass · ‖x_i − y_j‖²`.
    pub cost: T,
}

/// Exact `ρ₂` with the default budget.
pub fn wasserstein2<T: Scalar>(a: &Belief<T>, b: &Belief<T>) -> Result<T> {
    let est = wasserstein2_with(a, b, &OtOptions::default())?;
    Ok(est.value)
}

pub fn wasserstein2_with<T: Scalar>(a: &Belief<T>, b: &Belief<T>, opts: &OtOptions) -> Result<W2Estimate<T>> {
    check_dims(a, b)?;
    if a.dim() == 1 {
        let cost = line_transport(&SortedLine::new(a), &SortedLine::new(b), None);
        return Ok(W2Estimate {
            value: cost.max(T::zero()).sqrt(),
            approximate: false,
        });
    }
    let size = a.len().max(b.len());
    if size <= opts.exact_budget {
        let plan = network_transport(a, b);
        return Ok(W2Estimate {
            value: plan.cost.max(T::zero()).sqrt(),
            approximate: false,
        });
    }
    match opts.fallback {
        Fallback::Error => Err(ZdqError::BudgetExceeded {
            what: "exact transport support",
            size,
            budget: opts.exact_budget,
        }),
        Fallback::Sliced { projections, seed } => Ok(W2Estimate {
            value: sliced_w2(a, b, projections, seed),
            approximate: true,
        }),
    }
}

/// Optimal coupling between two beliefs (exact, within the budget).
pub fn optimal_coupling<T: Scalar>(a: &Belief<T>, b: &Belief<T>, budget: usize) -> Result<TransportPlan<T>> {
    check_dims(a, b)?;
    if a.dim() == 1 {
        let la = SortedLine::new(a);
        let lb = SortedLine::new(b);
        let mut entries = Vec::new();
        let cost = line_transport(&la, &lb, Some(&mut entries));
        return Ok(TransportPlan { entries, cost });
    }
    let size = a.len().max(b.len());
    if size > budget {
        return Err(ZdqError::BudgetExceeded {
            what: "exact transport support",
            size,
            budget,
        });
    }
    Ok(network_transport(a, b))
}

fn check_dims<T: Scalar>(a: &Belief<T>, b: &Belief<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(ZdqError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Support of a one-dimensional belief sorted by position, with original indices.
#[derive(Clone, Debug)]
pub struct SortedLine<T> {
    pub xs: Vec<T>,
    pub ws: Vec<T>,
    pub index: Vec<usize>,
    /// All weights identical.
    pub uniform: bool,
}

impl<T: Scalar> SortedLine<T> {
    pub fn new(b: &Belief<T>) -> Self {
        debug_assert_eq!(b.dim(), 1);
        Self::from_pairs(b.points(), b.weights())
    }

    /// Marginal of coordinate `r`.
    pub fn marginal(b: &Belief<T>, r: usize) -> Self {
        let xs: Vec<T> = (0..b.len()).map(|j| b.point(j)[r]).collect();
        Self::from_pairs(&xs, b.weights())
    }

    fn from_pairs(xs: &[T], ws: &[T]) -> Self {
        let mut keyed: Vec<(T, usize)> = xs.iter().copied().zip(0..).collect();
        keyed.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite support").then(a.1.cmp(&b.1)));
        let index: Vec<usize> = keyed.iter().map(|k| k.1).collect();
        let uniform = ws.iter().all(|&w| w == ws[0]);
        Self {
            xs: keyed.iter().map(|k| k.0).collect(),
            ws: index.iter().map(|&i| ws[i]).collect(),
            index,
            uniform,
        }
    }
}

/// Squared `ρ₂` between sorted supports via the quantile coupling.
pub fn line_transport<T: Scalar>(
    a: &SortedLine<T>,
    b: &SortedLine<T>,
    mut plan: Option<&mut Vec<(usize, usize, T)>>,
) -> T {
    if plan.is_none() && a.uniform && b.uniform && a.xs.len() == b.xs.len() && a.ws.first() == b.ws.first() {
        let w = a.ws.first().copied().unwrap_or_else(T::zero);
        return a.xs.iter().zip(&b.xs).fold(T::zero(), |acc, (&x, &y)| acc + w * (x - y) * (x - y));
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut ra = a.ws.first().copied().unwrap_or_else(T::zero);
    let mut rb = b.ws.first().copied().unwrap_or_else(T::zero);
    let mut cost = T::zero();
    while i < a.xs.len() && j < b.xs.len() {
        let m = ra.min(rb);
        if m > T::zero() {
            let dx = a.xs[i] - b.xs[j];
            cost = cost + m * dx * dx;
            if let Some(p) = plan.as_deref_mut() {
                p.push((a.index[i], b.index[j], m));
            }
        }
        ra = ra - m;
        rb = rb - m;
        // Whichever side ran out advances; the last atom of a side absorbs
        // rounding so the walk always finishes both lists.
        let a_done = ra <= T::zero() && i + 1 < a.xs.len();
        let b_done = rb <= T::zero() && j + 1 < b.xs.len();
        if a_done {
            i += 1;
            ra = a.ws[i];
        }
        if b_done {
            j += 1;
            rb = b.ws[j];
        }
        if !a_done && !b_done {
            if i + 1 >= a.xs.len() && j + 1 >= b.xs.len() {
                break;
            }
            if i + 1 >= a.xs.len() {
                // a exhausted up to rounding: hand b's remainder to a's last atom.
                ra = rb;
            } else {
                rb = ra;
            }
        }
    }
    cost
}

/// Exact discrete transport for arbitrary weights by successive shortest
/// paths. Nodes are a super-source, the `n` atoms of `a`, the `m` atoms of
/// `b` and a super-sink; arcs source→atom and atom→sink carry the masses.
pub fn network_transport<T: Scalar>(a: &Belief<T>, b: &Belief<T>) -> TransportPlan<T> {
    let n = a.len();
    let m = b.len();
    let mut cost = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = sq_dist(a.point(i), b.point(j));
        }
    }
    let uniform = |w: &[T]| w.iter().all(|&x| x == w[0]);
    if n == m && uniform(a.weights()) && uniform(b.weights()) && a.weights()[0] == b.weights()[0] {
        let w = a.weights()[0];
        let assign = solve_assignment(n, &cost);
        let entries: Vec<(usize, usize, T)> = assign.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
        let total = entries.iter().fold(T::zero(), |acc, &(i, j, f)| acc + f * cost[i * m + j]);
        return TransportPlan { entries, cost: total };
    }
    let flow = solve_transport(a.weights(), b.weights(), &cost);
    let mut entries = Vec::new();
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > T::zero() {
                entries.push((i, j, f));
                total = total + f * cost[i * m + j];
            }
        }
    }
    TransportPlan { entries, cost: total }
}

/// Minimum-cost perfect matching on a square row-major cost matrix
/// (Hungarian method with row and column potentials). Entry `i` of the
/// result is the column matched to row `i`.
pub fn solve_assignment<T: Scalar>(n: usize, cost: &[T]) -> Vec<usize> {
    // 1-based rows/columns; column 0 is the virtual start of each search.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] = u[row_of[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    assign
}

/// Min-cost flow for the transportation problem with supplies `a`, demands
/// `b` and row-major costs. Returns the `n × m` flow matrix.
pub fn solve_transport<T: Scalar>(a: &[T], b: &[T], cost: &[T]) -> Vec<T> {
    let n = a.len();
    let m = b.len();
    let total_a: T = a.iter().copied().sum();
    let eps = T::epsilon() * T::lit(64.0) * total_a.max(T::one());
    let mut supply: Vec<T> = a.to_vec();
    let mut demand: Vec<T> = b.to_vec();
    let mut flow = vec![T::zero(); n * m];
    // Node layout: 0 = super-source, 1..=n sources, n+1..=n+m sinks, n+m+1 super-sink.
    let nv = n + m + 2;
    let sink = nv - 1;
    let mut pot = vec![T::zero(); nv];
    let mut dist = vec![T::infinity(); nv];
    let mut prev = vec![usize::MAX; nv];
    let mut done = vec![false; nv];
    let inf = T::infinity();

    loop {
        if !supply.iter().any(|&s| s > eps) || !demand.iter().any(|&d| d > eps) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = inf);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[0] = T::zero();
        loop {
            let mut u = usize::MAX;
            let mut best = inf;
            for v in 0..nv {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u == sink {
                break;
            }
            let du = dist[u];
            let relax = |v: usize, c: T, dist: &mut [T], prev: &mut [usize]| {
                let rc = (c + pot[u] - pot[v]).max(T::zero());
                let nd = du + rc;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == 0 {
                for i in 0..n {
                    if supply[i] > eps && !done[1 + i] {
                        relax(1 + i, T::zero(), &mut dist, &mut prev);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    if !done[1 + n + j] {
                        relax(1 + n + j, cost[i * m + j], &mut dist, &mut prev);
                    }
                }
            } else {
                let j = u - 1 - n;
                if demand[j] > eps {
                    relax(sink, T::zero(), &mut dist, &mut prev);
                }
                for i in 0..n {
                    if flow[i * m + j] > eps && !done[1 + i] {
                        relax(1 + i, -cost[i * m + j], &mut dist, &mut prev);
                    }
                }
            }
        }
        if dist[sink] == inf {
            break;
        }
        let dt = dist[sink];
        for v in 0..nv {
            pot[v] = pot[v] + dist[v].min(dt);
        }
        // Bottleneck along the path sink ← sink-atom ← … ← source-atom ← 0.
        let mut delta = inf;
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            if u == 0 {
                delta = delta.min(supply[v - 1]);
            } else if v == sink {
                delta = delta.min(demand[u - 1 - n]);
            } else if u > n {
                // backward arc sink-atom u → source-atom v
                delta = delta.min(flow[(v - 1) * m + (u - 1 - n)]);
            }
            v = u;
        }
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            if u == 0 {
                supply[v - 1] = supply[v - 1] - delta;
            } else if v == sink {
                demand[u - 1 - n] = demand[u - 1 - n] - delta;
            } else if u <= n {
                let k = (u - 1) * m + (v - 1 - n);
                flow[k] = flow[k] + delta;
            } else {
                let k = (v - 1) * m + (u - 1 - n);
                flow[k] = flow[k] - delta;
                if flow[k] <= eps {
                    flow[k] = T::zero();
                }
            }
            v = u;
        }
    }
    flow
}

/// Sliced `ρ₂`: root-mean of exact 1-d distances of random projections.
pub fn sliced_w2<T: Scalar>(a: &Belief<T>, b: &Belief<T>, projections: usize, seed: u64) -> T {
    let d = a.dim();
    let mut rng = stream_rng(seed, 0);
    let mut acc = T::zero();
    let k = projections.max(1);
    let mut dir = vec![T::zero(); d];
    for _ in 0..k {
        random_direction(&mut rng, &mut dir);
        let pa: Vec<T> = a.iter().map(|(x, _)| dot(x, &dir)).collect();
        let pb: Vec<T> = b.iter().map(|(x, _)| dot(x, &dir)).collect();
        let la = SortedLine::from_pairs(&pa, a.weights());
        let lb = SortedLine::from_pairs(&pb, b.weights());
        acc = acc + line_transport(&la, &lb, None);
    }
    (acc / T::from_usize_lossy(k)).max(T::zero()).sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn random_direction<T: Scalar, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    loop {
        for v in out.iter_mut() {
            *v = T::standard_normal(rng);
        }
        let norm = out.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
        if norm > T::epsilon() {
            out.iter_mut().for_each(|v| *v = *v / norm);
            return;
        }
    }
}

/// `Σ_r ρ₂²` of the coordinate marginals, a lower bound on `ρ₂²` that is
/// exact in one dimension.
pub fn marginal_sq_lower_bound<T: Scalar>(a: &[SortedLine<T>], b: &[SortedLine<T>]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + line_transport(x, y, None))
}

/// Cheap lower bound `√(‖m_a − m_b‖² + (s_a − s_b)²)` on `ρ₂`, where `s` is
/// the square root of the total variance.
pub fn w2_lower_bound<T: Scalar>(mean_a: &[T], spread_a: T, mean_b: &[T], spread_b: T) -> T {
    let ds = spread_a - spread_b;
    (sq_dist(mean_a, mean_b) + ds * ds).sqrt()
}
