//! Power-diagram quantizers.
//!
//! Cell `i` is `{x : ‖x − c_i‖² − ω_i ≤ ‖x − c_j‖² − ω_j ∀ j}`. Expanding the
//! squares turns every constraint into a half-space, so cells are convex
//! polyhedra and together they tile ℝ^d. Zero weights give the
//! nearest-neighbour quantizer. Cell indices are zero-based throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{Result, ZdqError};
use crate::rng::stream_rng;
use crate::scalar::{sq_dist, Scalar};

/// Anything that assigns a point to one of finitely many cells.
pub trait CellPartition<T> {
    fn n_cells(&self) -> usize;
    fn dim(&self) -> usize;
    fn cell(&self, x: &[T]) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexQuantizer<T> {
    dim: usize,
    sites: Vec<T>,
    weights: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct QuantizerRecord<T> {
    #[serde(rename = "M")]
    cells: usize,
    sites: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> Serialize for ConvexQuantizer<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        QuantizerRecord {
            cells: self.n_cells(),
            sites: self.sites.clone(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for ConvexQuantizer<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = QuantizerRecord::<T>::deserialize(d)?;
        if rec.cells == 0 || rec.sites.len() % rec.cells != 0 {
            return Err(serde::de::Error::custom("sites length is not a multiple of M"));
        }
        let dim = rec.sites.len() / rec.cells;
        ConvexQuantizer::new(dim, rec.sites, rec.weights).map_err(serde::de::Error::custom)
    }
}

impl<T: Scalar> ConvexQuantizer<T> {
    /// `sites` is row-major, `M × dim`.
    pub fn new(dim: usize, sites: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if dim == 0 || sites.is_empty() || sites.len() % dim != 0 {
            return Err(ZdqError::InvalidParameter(format!(
                "{} site coordinates do not form points of dimension {dim}",
                sites.len()
            )));
        }
        let m = sites.len() / dim;
        if weights.len() != m {
            return Err(ZdqError::DimensionMismatch {
                expected: m,
                got: weights.len(),
            });
        }
        if sites.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(ZdqError::NonFinite("quantizer"));
        }
        Ok(Self { dim, sites, weights })
    }

    /// Nearest-neighbour quantizer (all weights zero).
    pub fn nearest_neighbor(dim: usize, sites: Vec<T>) -> Result<Self> {
        let m = if dim == 0 { 0 } else { sites.len() / dim };
        Self::new(dim, sites, vec![T::zero(); m])
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn site(&self, i: usize) -> &[T] {
        &self.sites[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sites(&self) -> &[T] {
        &self.sites
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn score(&self, i: usize, x: &[T]) -> T {
        sq_dist(x, self.site(i)) - self.weights[i]
    }

    /// Cell of `x`; ties go to the lowest index.
    #[inline]
    pub fn encode(&self, x: &[T]) -> usize {
        let mut best = 0;
        let mut best_score = self.score(0, x);
        for i in 1..self.n_cells() {
            let s = self.score(i, x);
            if s < best_score {
                best = i;
                best_score = s;
            }
        }
        best
    }

    /// One Lloyd update: weights reset to zero, each site moves to the
    /// belief centroid of its current cell. Empty cells keep their site.
    pub fn lloyd_step(&self, belief: &Belief<T>) -> Self {
        let m = self.n_cells();
        let d = self.dim;
        let mut mass = vec![T::zero(); m];
        let mut sum = vec![T::zero(); m * d];
        for (x, w) in belief.iter() {
            let i = self.encode(x);
            mass[i] = mass[i] + w;
            for k in 0..d {
                sum[i * d + k] = sum[i * d + k] + w * x[k];
            }
        }
        let mut sites = self.sites.clone();
        for i in 0..m {
            if mass[i] > T::zero() {
                for k in 0..d {
                    sites[i * d + k] = sum[i * d + k] / mass[i];
                }
            }
        }
        Self {
            dim: d,
            sites,
            weights: vec![T::zero(); m],
        }
    }

    /// Lloyd iterations until the sites stop moving or `max_iter` is hit.
    pub fn lloyd(&self, belief: &Belief<T>, max_iter: usize) -> Self {
        let mut q = self.clone();
        for _ in 0..max_iter {
            let next = q.lloyd_step(belief);
            let moved = next.sites != q.sites || next.weights != q.weights;
            q = next;
            if !moved {
                break;
            }
        }
        q
    }

    /// Same partition with cells relabelled so sites are lexicographically sorted.
    pub fn canonical(&self) -> Self {
        let mut order: Vec<usize> = (0..self.n_cells()).collect();
        order.sort_by(|&a, &b| {
            self.site(a)
                .iter()
                .zip(self.site(b))
                .map(|(x, y)| x.partial_cmp(y).expect("finite sites"))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut sites = Vec::with_capacity(self.sites.len());
        let mut weights = Vec::with_capacity(self.n_cells());
        for &i in &order {
            sites.extend_from_slice(self.site(i));
            weights.push(self.weights[i]);
        }
        Self {
            dim: self.dim,
            sites,
            weights,
        }
    }

    fn translated(&self, axis: usize, by: T) -> Self {
        let mut q = self.clone();
        for i in 0..q.n_cells() {
            q.sites[i * q.dim + axis] = q.sites[i * q.dim + axis] + by;
        }
        q
    }
}

impl<T: Scalar> CellPartition<T> for ConvexQuantizer<T> {
    fn n_cells(&self) -> usize {
        ConvexQuantizer::n_cells(self)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn cell(&self, x: &[T]) -> usize {
        self.encode(x)
    }
}

/// Result of sampling same-cell pairs and checking their midpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvexityReport {
    pub checked: usize,
    pub violations: usize,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Draws point pairs uniformly in `[-radius, radius]^d` until `n_pairs` pairs
/// fall in a common cell (or the attempt budget `200 · n_pairs` runs out) and
/// checks that each midpoint stays in that cell.
pub fn convexity_probe<T: Scalar, P: CellPartition<T>>(
    partition: &P,
    n_pairs: usize,
    radius: T,
    seed: u64,
) -> ConvexityReport {
    let d = partition.dim();
    let mut rng = stream_rng(seed, 0);
    let mut report = ConvexityReport {
        checked: 0,
        violations: 0,
    };
    if partition.n_cells() <= 1 {
        return report;
    }
    let mut x = vec![T::zero(); d];
    let mut y = vec![T::zero(); d];
    let mut mid = vec![T::zero(); d];
    let two = T::lit(2.0);
    for _ in 0..n_pairs.saturating_mul(200) {
        if report.checked >= n_pairs {
            break;
        }
        for k in 0..d {
            x[k] = radius * (two * T::unit_uniform(&mut rng) - T::one());
            y[k] = radius * (two * T::unit_uniform(&mut rng) - T::one());
        }
        let cx = partition.cell(&x);
        if partition.cell(&y) != cx {
            continue;
        }
        for k in 0..d {
            mid[k] = (x[k] + y[k]) / two;
        }
        report.checked += 1;
        if partition.cell(&mid) != cx {
            report.violations += 1;
        }
    }
    report
}

fn weighted_index<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Option<usize> {
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return None;
    }
    let u = T::unit_uniform(rng) * total;
    let mut acc = T::zero();
    for (i, &w) in weights.iter().enumerate() {
        acc = acc + w;
        if u < acc {
            return Some(i);
        }
    }
    weights.iter().rposition(|&w| w > T::zero())
}

/// k-means++ seeding of `m` sites from the particles of `belief`. When the
/// belief has fewer distinct points than `m`, the remaining sites are spread
/// along the first axis by `spread`.
fn kmeanspp_sites<T: Scalar, R: Rng + ?Sized>(
    belief: &Belief<T>,
    m: usize,
    spread: T,
    rng: &mut R,
) -> Vec<T> {
    let d = belief.dim();
    let mut sites: Vec<T> = Vec::with_capacity(m * d);
    let first = weighted_index(belief.weights(), rng).unwrap_or(0);
    sites.extend_from_slice(belief.point(first));
    let mut d2: Vec<T> = belief
        .iter()
        .map(|(x, w)| w * sq_dist(x, belief.point(first)))
        .collect();
    let mut extra = 0usize;
    while sites.len() < m * d {
        match weighted_index(&d2, rng) {
            Some(j) => {
                let p = belief.point(j).to_vec();
                for (k, (x, w)) in belief.iter().enumerate() {
                    d2[k] = d2[k].min(w * sq_dist(x, &p));
                }
                sites.extend_from_slice(&p);
            }
            None => {
                extra += 1;
                let mut p = belief.point(first).to_vec();
                p[0] = p[0] + spread * T::lit(0.5) * T::from_usize_lossy(extra);
                sites.extend_from_slice(&p);
            }
        }
    }
    sites
}

fn pooled_stats<T: Scalar>(beliefs: &[Belief<T>]) -> (Vec<T>, Vec<T>) {
    let d = beliefs[0].dim();
    let n = T::from_usize_lossy(beliefs.len());
    let mut mean = vec![T::zero(); d];
    let mut sq = vec![T::zero(); d];
    for b in beliefs {
        for (x, w) in b.iter() {
            for k in 0..d {
                mean[k] = mean[k] + w * x[k] / n;
                sq[k] = sq[k] + w * x[k] * x[k] / n;
            }
        }
    }
    let std = (0..d)
        .map(|k| {
            let v = (sq[k] - mean[k] * mean[k]).max(T::zero()).sqrt();
            if v > T::epsilon() {
                v
            } else {
                T::one()
            }
        })
        .collect();
    (mean, std)
}

/// Regular grid of `m` sites around `mean`, scaled per axis by `std`.
fn lattice<T: Scalar>(m: usize, mean: &[T], std: &[T]) -> Vec<T> {
    let d = mean.len();
    let mut g = 1usize;
    while g.pow(d as u32) < m {
        g += 1;
    }
    let gs = T::from_usize_lossy(g);
    let half = (gs - T::one()) / T::lit(2.0);
    let scale = T::lit(3.0) / gs;
    let mut sites = Vec::with_capacity(m * d);
    for idx in 0..m {
        let mut rest = idx;
        for k in 0..d {
            let ik = T::from_usize_lossy(rest % g);
            rest /= g;
            sites.push(mean[k] + std[k] * (ik - half) * scale);
        }
    }
    sites
}

fn same_sites<T: Scalar>(a: &ConvexQuantizer<T>, b: &ConvexQuantizer<T>) -> bool {
    a.n_cells() == b.n_cells()
        && a.sites
            .iter()
            .zip(&b.sites)
            .all(|(x, y)| (*x - *y).abs() <= T::lit(1e-9) * (T::one() + x.abs()))
        && a.weights == b.weights
}

fn push_distinct<T: Scalar>(library: &mut Vec<ConvexQuantizer<T>>, q: ConvexQuantizer<T>, step: T) {
    let mut q = q;
    let mut shift = 0usize;
    while library.iter().any(|o| same_sites(o, &q)) {
        shift += 1;
        q = q.translated(0, step * T::from_usize_lossy(shift));
    }
    library.push(q);
}

/// Finite action library: Lloyd fixed points on anchor beliefs chosen by a
/// k-means++ draw over belief means, each seeded by k-means++ over the
/// anchor's particles, plus (when `n_actions ≥ 2`) one scaled-lattice
/// quantizer over the pooled particles. All weights are zero and sites are
/// canonically ordered. Duplicates are made distinct by translation.
pub fn design_action_library<T: Scalar>(
    beliefs: &[Belief<T>],
    m: usize,
    n_actions: usize,
    lloyd_iters: usize,
    seed: u64,
) -> Result<Vec<ConvexQuantizer<T>>> {
    if beliefs.is_empty() {
        return Err(ZdqError::EmptyBeliefs);
    }
    if m == 0 || n_actions == 0 {
        return Err(ZdqError::InvalidParameter(
            "library needs M >= 1 and n_actions >= 1".into(),
        ));
    }
    let d = beliefs[0].dim();
    if let Some(b) = beliefs.iter().find(|b| b.dim() != d) {
        return Err(ZdqError::DimensionMismatch {
            expected: d,
            got: b.dim(),
        });
    }
    let mut rng = stream_rng(seed, 0);
    let (pool_mean, pool_std) = pooled_stats(beliefs);
    let step = pool_std[0] * T::lit(0.25);
    let n_lloyd = if n_actions >= 2 { n_actions - 1 } else { 1 };

    let means: Vec<Vec<T>> = beliefs.iter().map(|b| b.moments().0).collect();
    let mut anchors: Vec<usize> = Vec::with_capacity(n_lloyd);
    anchors.push(rng.random_range(0..beliefs.len()));
    let mut d2: Vec<T> = means.iter().map(|mu| sq_dist(mu, &means[anchors[0]])).collect();
    while anchors.len() < n_lloyd {
        let next = weighted_index(&d2, &mut rng).unwrap_or_else(|| rng.random_range(0..beliefs.len()));
        for (k, mu) in means.iter().enumerate() {
            d2[k] = d2[k].min(sq_dist(mu, &means[next]));
        }
        anchors.push(next);
    }

    let mut library = Vec::with_capacity(n_actions);
    for &a in &anchors {
        let belief = &beliefs[a];
        let sites = kmeanspp_sites(belief, m, pool_std[0], &mut rng);
        let q0 = ConvexQuantizer::nearest_neighbor(d, sites)?;
        let q = q0.lloyd(belief, lloyd_iters).canonical();
        push_distinct(&mut library, q, step);
    }
    if n_actions >= 2 {
        let q = ConvexQuantizer::nearest_neighbor(d, lattice(m, &pool_mean, &pool_std))?.canonical();
        push_distinct(&mut library, q, step);
    }
    Ok(library)
}
