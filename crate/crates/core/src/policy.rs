//! Stationary belief-feedback policies and their self-contained policy files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::{Belief, FilterSettings};
use crate::coding::{optimal_decoder, Codebook};
use crate::error::{Result, ZdqError};
use crate::linalg::Matrix;
use crate::planner::{AverageCostSolution, BeliefCover};
use crate::quantizer::ConvexQuantizer;
use crate::scalar::Scalar;
use crate::source::SourceModel;

pub const POLICY_FORMAT_VERSION: u32 = 1;

/// SHA-256 over the dimension and the bit patterns of `A` and `Σ`.
pub fn model_hash<T: Scalar>(model: &SourceModel<T>) -> String {
    let mut h = Sha256::new();
    h.update(b"zdq-model-v1");
    h.update((model.dim() as u64).to_le_bytes());
    for &v in model.a().as_slice() {
        h.update(v.canonical_bits().to_le_bytes());
    }
    for &v in model.noise().covariance().as_slice() {
        h.update(v.canonical_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps a belief to the action of its nearest cover representative.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryPolicy<T: Scalar> {
    model_hash: String,
    cover: BeliefCover<T>,
    actions: Vec<ConvexQuantizer<T>>,
    map: Vec<usize>,
    decoders: Vec<Codebook<T>>,
    settings: FilterSettings<T>,
}

impl<T: Scalar> StationaryPolicy<T> {
    pub fn new(
        model: &SourceModel<T>,
        cover: BeliefCover<T>,
        actions: Vec<ConvexQuantizer<T>>,
        map: Vec<usize>,
        settings: FilterSettings<T>,
    ) -> Result<Self> {
        Self::with_hash(model_hash(model), model.dim(), cover, actions, map, settings)
    }

    fn with_hash(
        model_hash: String,
        dim: usize,
        cover: BeliefCover<T>,
        actions: Vec<ConvexQuantizer<T>>,
        map: Vec<usize>,
        settings: FilterSettings<T>,
    ) -> Result<Self> {
        if map.len() != cover.len() {
            return Err(ZdqError::InvalidParameter(format!(
                "policy map covers {} of {} representatives",
                map.len(),
                cover.len()
            )));
        }
        if let Some(&a) = map.iter().find(|&&a| a >= actions.len()) {
            return Err(ZdqError::InvalidParameter(format!(
                "action {a} outside a library of {}",
                actions.len()
            )));
        }
        if cover.dim() != dim {
            return Err(ZdqError::DimensionMismatch {
                expected: dim,
                got: cover.dim(),
            });
        }
        if let Some(q) = actions.iter().find(|q| q.dim() != dim) {
            return Err(ZdqError::DimensionMismatch {
                expected: dim,
                got: q.dim(),
            });
        }
        let decoders = cover
            .representatives()
            .iter()
            .zip(&map)
            .map(|(rep, &a)| optimal_decoder(rep, &actions[a]))
            .collect();
        Ok(Self {
            model_hash,
            cover,
            actions,
            map,
            decoders,
            settings,
        })
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn check_model(&self, model: &SourceModel<T>) -> Result<()> {
        let found = model_hash(model);
        if found == self.model_hash {
            Ok(())
        } else {
            Err(ZdqError::ModelMismatch {
                expected: self.model_hash.clone(),
                found,
            })
        }
    }

    pub fn cover(&self) -> &BeliefCover<T> {
        &self.cover
    }

    pub fn actions(&self) -> &[ConvexQuantizer<T>] {
        &self.actions
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Centroid codebook of each representative under its mapped action.
    pub fn decoders(&self) -> &[Codebook<T>] {
        &self.decoders
    }

    pub fn settings(&self) -> &FilterSettings<T> {
        &self.settings
    }

    /// `(representative, action)` for an arbitrary belief.
    pub fn action_for(&self, belief: &Belief<T>) -> Result<(usize, usize)> {
        let (k, _) = self.cover.nearest(belief)?;
        Ok((k, self.map[k]))
    }

    /// Same cover and actions with a different map.
    pub fn with_map(&self, map: Vec<usize>) -> Result<Self> {
        Self::with_hash(
            self.model_hash.clone(),
            self.cover.dim(),
            self.cover.clone(),
            self.actions.clone(),
            map,
            self.settings,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelRecord<T> {
    pub dim: usize,
    #[serde(rename = "A")]
    pub a: Vec<T>,
    pub cov: Vec<T>,
}

impl<T: Scalar> ModelRecord<T> {
    pub fn of(model: &SourceModel<T>) -> Self {
        Self {
            dim: model.dim(),
            a: model.a().as_slice().to_vec(),
            cov: model.noise().covariance().as_slice().to_vec(),
        }
    }

    pub fn build(&self) -> Result<SourceModel<T>> {
        SourceModel::gaussian(
            Matrix::from_row_major(self.dim, self.a.clone())?,
            Matrix::from_row_major(self.dim, self.cov.clone())?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValueRecord<T> {
    pub beta: T,
    pub values: Vec<T>,
    pub greedy: Vec<usize>,
    pub iterations: usize,
    pub sup_residual: T,
    pub converged: bool,
}

/// Everything needed to rerun a designed policy: the model, the action
/// library, the cover particles, the solver output and the seeds used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct PolicyFile<T: Scalar> {
    pub format_version: u32,
    pub model_hash: String,
    pub model: ModelRecord<T>,
    pub filter: FilterSettings<T>,
    pub actions: Vec<ConvexQuantizer<T>>,
    pub cover: BeliefCover<T>,
    pub map: Vec<usize>,
    pub decoders: Vec<Codebook<T>>,
    pub value_table: ValueRecord<T>,
    pub rho_star: T,
    pub h: Vec<T>,
    pub reference: usize,
    pub beta_schedule: Vec<T>,
    pub rho_trend: Vec<T>,
    pub acoe_residual: T,
    pub converged: bool,
    pub seeds: BTreeMap<String, u64>,
}

impl<T: Scalar> PolicyFile<T> {
    pub fn new(
        model: &SourceModel<T>,
        policy: &StationaryPolicy<T>,
        solution: &AverageCostSolution<T>,
        seeds: BTreeMap<String, u64>,
    ) -> Result<Self> {
        policy.check_model(model)?;
        let t = &solution.last_table;
        Ok(Self {
            format_version: POLICY_FORMAT_VERSION,
            model_hash: policy.model_hash.clone(),
            model: ModelRecord::of(model),
            filter: policy.settings,
            actions: policy.actions.clone(),
            cover: policy.cover.clone(),
            map: policy.map.clone(),
            decoders: policy.decoders.clone(),
            value_table: ValueRecord {
                beta: t.beta,
                values: t.values.clone(),
                greedy: t.greedy.clone(),
                iterations: t.iterations,
                sup_residual: t.sup_residual,
                converged: t.converged,
            },
            rho_star: solution.rho_star,
            h: solution.h.clone(),
            reference: solution.reference,
            beta_schedule: solution.beta_schedule.clone(),
            rho_trend: solution.rho_trend.clone(),
            acoe_residual: solution.acoe_residual,
            converged: solution.converged,
            seeds,
        })
    }

    /// Rebuilds the model and checks it against the stored hash.
    pub fn model(&self) -> Result<SourceModel<T>> {
        let model = self.model.build()?;
        let found = model_hash(&model);
        if found != self.model_hash {
            return Err(ZdqError::ModelMismatch {
                expected: self.model_hash.clone(),
                found,
            });
        }
        Ok(model)
    }

    pub fn policy(&self) -> Result<StationaryPolicy<T>> {
        StationaryPolicy::with_hash(
            self.model_hash.clone(),
            self.model.dim,
            self.cover.clone(),
            self.actions.clone(),
            self.map.clone(),
            self.filter,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let file: Self = serde_json::from_reader(r)?;
        if file.format_version != POLICY_FORMAT_VERSION {
            return Err(ZdqError::InvalidParameter(format!(
                "unsupported policy format version {}",
                file.format_version
            )));
        }
        Ok(file)
    }
}
