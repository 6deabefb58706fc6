//! Zero-delay fixed-rate quantization of linear Gaussian Markov sources as a
//! belief-state MDP: particle filtering, Wasserstein belief covers, discounted
//! value iteration and vanishing-discount average-cost policies, plus Monte
//! Carlo checks of the accompanying bounds.

pub mod belief;
pub mod coding;
pub mod error;
pub mod linalg;
pub mod ot;
pub mod pipeline;
pub mod planner;
pub mod policy;
pub mod quantizer;
pub mod rng;
pub mod scalar;
pub mod source;
pub mod verify;

pub use belief::{Belief, FilterSettings};
pub use coding::{evaluate_policy, optimal_decoder, stage_cost, ClosedLoop, Codebook, CostReport};
pub use error::{Result, ZdqError};
pub use linalg::Matrix;
pub use ot::{wasserstein2, wasserstein2_with, OtOptions};
pub use pipeline::{design, Design, DesignParams};
pub use planner::{
    acoe_residual, bellman_backup, build_cover, value_iteration, vanishing_discount, AverageCostSolution, BeliefCover,
    CoverSpec, FrozenKernel, ValueTable,
};
pub use policy::{model_hash, PolicyFile, StationaryPolicy};
pub use quantizer::{design_action_library, ConvexQuantizer};
pub use scalar::Scalar;
pub use source::{InitialDistribution, NoiseModel, SourceModel};
pub use verify::{BoundCheck, BoundConstants};

pub type Belief64 = Belief<f64>;
pub type Belief32 = Belief<f32>;
pub type SourceModel64 = SourceModel<f64>;
pub type SourceModel32 = SourceModel<f32>;
pub type ConvexQuantizer64 = ConvexQuantizer<f64>;
pub type ConvexQuantizer32 = ConvexQuantizer<f32>;
pub type StationaryPolicy64 = StationaryPolicy<f64>;
pub type PolicyFile64 = PolicyFile<f64>;
pub type DesignParams64 = DesignParams<f64>;
