//! End-to-end design: action library, belief cover, frozen kernel,
//! vanishing-discount solution and the resulting stationary policy.

use std::collections::BTreeMap;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, FilterSettings};
use crate::error::{Result, ZdqError};
use crate::planner::{build_cover, vanishing_discount, AverageCostSolution, BeliefCover, CoverSpec, FrozenKernel};
use crate::policy::{PolicyFile, StationaryPolicy};
use crate::quantizer::{design_action_library, ConvexQuantizer};
use crate::rng::{derive_seed, StreamRng};
use crate::scalar::Scalar;
use crate::source::{InitialDistribution, SourceModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DesignParams<T> {
    pub m: usize,
    pub n_actions: usize,
    pub lloyd_iters: usize,
    pub cover_radius: T,
    pub n_rollouts: usize,
    pub rollout_horizon: usize,
    pub cover_cap: usize,
    pub beta_schedule: Vec<T>,
    pub tol: T,
    pub max_iter: usize,
    pub reference: usize,
    pub filter: FilterSettings<T>,
}

impl<T: Scalar> DesignParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ZdqError::InvalidParameter(msg.into()));
        if self.m == 0 {
            return bad("M must be at least 1");
        }
        if self.n_actions == 0 {
            return bad("n_actions must be at least 1");
        }
        if !(self.cover_radius > T::zero()) {
            return bad("cover radius must be positive");
        }
        if self.cover_cap == 0 {
            return bad("cover cap must be at least 1");
        }
        if self.beta_schedule.is_empty() {
            return bad("beta schedule must not be empty");
        }
        if self.beta_schedule.iter().any(|&b| !(b > T::zero() && b < T::one()))
            || self.beta_schedule.windows(2).any(|w| !(w[0] < w[1]))
        {
            return bad("beta schedule must increase inside (0, 1)");
        }
        if !(self.tol > T::zero()) {
            return bad("tol must be positive");
        }
        if self.filter.n_particles == 0 {
            return bad("n_particles must be positive");
        }
        if !(self.filter.mass_floor >= T::zero()) {
            return bad("mass_floor must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Design<T: Scalar> {
    pub library: Vec<ConvexQuantizer<T>>,
    pub cover: BeliefCover<T>,
    pub kernel: FrozenKernel<T>,
    pub solution: AverageCostSolution<T>,
    pub policy: StationaryPolicy<T>,
    pub seeds: BTreeMap<String, u64>,
}

impl<T: Scalar> Design<T> {
    pub fn policy_file(&self, model: &SourceModel<T>) -> Result<PolicyFile<T>> {
        PolicyFile::new(model, &self.policy, &self.solution, self.seeds.clone())
    }
}

/// Beliefs the first action library is fitted to before any cover exists:
/// the initial belief and a particle draw from the stationary law.
fn bootstrap_beliefs<T: Scalar>(model: &SourceModel<T>, init: &InitialDistribution<T>, n: usize, seed: u64) -> Vec<Belief<T>> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut beliefs = vec![init.belief()];
    if let Some(chol) = model.stationary_covariance().cholesky() {
        beliefs.push(Belief::gaussian_sample(&vec![T::zero(); model.dim()], &chol, n, &mut rng));
    }
    beliefs
}

/// Two rounds of library/cover fitting: a library on bootstrap beliefs gives a
/// first cover, whose representatives the final library is fitted to; the
/// final cover is then built under the final library.
pub fn design<T: Scalar>(
    model: &SourceModel<T>,
    init: &InitialDistribution<T>,
    params: &DesignParams<T>,
    seed: u64,
) -> Result<Design<T>> {
    params.validate()?;
    if init.dim() != model.dim() {
        return Err(ZdqError::DimensionMismatch {
            expected: model.dim(),
            got: init.dim(),
        });
    }
    let labels = ["bootstrap", "library0", "cover0", "library", "cover", "kernel"];
    let seeds: BTreeMap<String, u64> = std::iter::once(("master".to_string(), seed))
        .chain(labels.iter().map(|l| (l.to_string(), derive_seed(seed, l))))
        .collect();
    let s = |l: &str| seeds[l];
    let spec = CoverSpec {
        n_rollouts: params.n_rollouts,
        horizon: params.rollout_horizon,
        radius: params.cover_radius,
        cap: params.cover_cap,
    };

    let boot = bootstrap_beliefs(model, init, params.filter.n_particles, s("bootstrap"));
    let lib0 = design_action_library(&boot, params.m, params.n_actions, params.lloyd_iters, s("library0"))?;
    let cover0 = build_cover(model, &lib0, init, &spec, &params.filter, s("cover0"))?;
    let library = design_action_library(
        cover0.representatives(),
        params.m,
        params.n_actions,
        params.lloyd_iters,
        s("library"),
    )?;
    let cover = build_cover(model, &library, init, &spec, &params.filter, s("cover"))?;
    let kernel = FrozenKernel::freeze(model, &cover, &library, &params.filter, s("kernel"))?;
    let reference = params.reference.min(cover.len() - 1);
    let solution = vanishing_discount(&kernel, &params.beta_schedule, reference, params.tol, params.max_iter)?;
    let policy = StationaryPolicy::new(model, cover.clone(), library.clone(), solution.greedy.clone(), params.filter)?;
    Ok(Design {
        library,
        cover,
        kernel,
        solution,
        policy,
        seeds,
    })
}
