//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zdq_core::{Belief, DesignParams, FilterSettings, InitialDistribution, Matrix, SourceModel};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    /// Row-major `dim × dim`.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub noise: NoiseSection,
    pub init: InitSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub library: LibrarySection,
    #[serde(default)]
    pub cover: CoverSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_seed() -> u64 {
    2024
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Row-major `dim × dim` covariance.
    pub cov: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    /// Particle CSV (`w,x1..xd`), relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySection {
    #[serde(rename = "M")]
    pub m: usize,
    pub n_actions: usize,
    pub lloyd_iters: usize,
}

impl Default for LibrarySection {
    fn default() -> Self {
        Self {
            m: 2,
            n_actions: 8,
            lloyd_iters: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverSection {
    pub radius: f64,
    pub n_rollouts: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub cap: usize,
}

impl Default for CoverSection {
    fn default() -> Self {
        Self {
            radius: 0.25,
            n_rollouts: 32,
            horizon: 64,
            cap: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub n_particles: usize,
    pub mass_floor: f64,
    pub exact_budget: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterSettings::<f64>::default();
        Self {
            n_particles: d.n_particles,
            mass_floor: d.mass_floor,
            exact_budget: d.exact_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub beta_schedule: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Cover index of the reference belief for relative values.
    pub reference: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            beta_schedule: vec![0.9, 0.99, 0.999, 0.9999],
            tol: 1e-6,
            max_iter: 10_000_000,
            reference: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    pub n_traj: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            t_grid: vec![8, 16, 32, 64, 128, 256],
            n_traj: 10_000,
            beta: Some(0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n_traj: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { horizon: 64, n_traj: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Horizon and trajectory count of the second-moment check.
    #[serde(rename = "moment_T")]
    pub moment_horizon: usize,
    pub moment_traj: usize,
    /// Discounts for the discounted-cost and equicontinuity checks.
    pub betas: Vec<f64>,
    /// Truncation of discounted rollouts.
    pub t_trunc: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            moment_horizon: 64,
            moment_traj: 100_000,
            betas: vec![0.9, 0.99],
            t_trunc: 2048,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |key: &str, msg: &str| Err(CliError::Config(format!("key `{key}`: {msg}")));
        let d = self.dim;
        if d == 0 {
            return fail("dim", "must be at least 1");
        }
        if self.a.len() != d * d {
            return fail("A", &format!("expected {} entries (dim²), found {}", d * d, self.a.len()));
        }
        if self.noise.cov.len() != d * d {
            return fail("noise.cov", &format!("expected {} entries (dim²), found {}", d * d, self.noise.cov.len()));
        }
        match (&self.init.point, &self.init.particles_file) {
            (Some(_), Some(_)) => return fail("init", "give either `point` or `particles_file`, not both"),
            (None, None) => return fail("init", "one of `point` or `particles_file` is required"),
            (Some(p), None) if p.len() != d => {
                return fail("init.point", &format!("expected {d} coordinates, found {}", p.len()))
            }
            _ => {}
        }
        if self.library.m == 0 {
            return fail("library.M", "must be at least 1");
        }
        if self.library.n_actions == 0 {
            return fail("library.n_actions", "must be at least 1");
        }
        if !(self.cover.radius > 0.0 && self.cover.radius.is_finite()) {
            return fail("cover.radius", "must be positive");
        }
        if self.cover.cap == 0 {
            return fail("cover.cap", "must be at least 1");
        }
        if self.filter.n_particles == 0 {
            return fail("filter.n_particles", "must be at least 1");
        }
        if !(self.filter.mass_floor >= 0.0 && self.filter.mass_floor < 1.0) {
            return fail("filter.mass_floor", "must lie in [0, 1)");
        }
        let s = &self.solver.beta_schedule;
        if s.is_empty() {
            return fail("solver.beta_schedule", "must not be empty");
        }
        if s.iter().any(|&b| !(b > 0.0 && b < 1.0)) || s.windows(2).any(|w| w[0] >= w[1]) {
            return fail("solver.beta_schedule", "must increase strictly inside (0, 1)");
        }
        if !(self.solver.tol > 0.0) {
            return fail("solver.tol", "must be positive");
        }
        if self.solver.max_iter == 0 {
            return fail("solver.max_iter", "must be at least 1");
        }
        let g = &self.evaluation.t_grid;
        if g.is_empty() {
            return fail("evaluation.T_grid", "must not be empty");
        }
        if g[0] == 0 || g.windows(2).any(|w| w[0] >= w[1]) {
            return fail("evaluation.T_grid", "must be positive and strictly increasing");
        }
        if self.evaluation.n_traj == 0 {
            return fail("evaluation.n_traj", "must be at least 1");
        }
        if let Some(b) = self.evaluation.beta {
            if !(0.0..1.0).contains(&b) {
                return fail("evaluation.beta", "must lie in [0, 1)");
            }
        }
        if self.simulate.n_traj == 0 {
            return fail("simulate.n_traj", "must be at least 1");
        }
        if self.verify.moment_traj == 0 {
            return fail("verify.moment_traj", "must be at least 1");
        }
        if self.verify.betas.iter().any(|&b| !(0.0..1.0).contains(&b)) {
            return fail("verify.betas", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SourceModel<f64>, CliError> {
        let a = Matrix::from_row_major(self.dim, self.a.clone()).map_err(|e| CliError::Config(format!("key `A`: {e}")))?;
        let cov = Matrix::from_row_major(self.dim, self.noise.cov.clone())
            .map_err(|e| CliError::Config(format!("key `noise.cov`: {e}")))?;
        SourceModel::gaussian(a, cov).map_err(|e| CliError::Config(format!("model: {e}")))
    }

    /// `base` resolves a relative `particles_file`.
    pub fn initial(&self, base: &Path) -> Result<InitialDistribution<f64>, CliError> {
        if let Some(p) = &self.init.point {
            return Ok(InitialDistribution::PointMass(p.clone()));
        }
        let rel = self.init.particles_file.as_ref().expect("validated");
        let path = if rel.is_absolute() { rel.clone() } else { base.join(rel) };
        let file = std::fs::File::open(&path)
            .map_err(|e| CliError::Config(format!("key `init.particles_file`: {}: {e}", path.display())))?;
        let belief = Belief::read_csv(file)
            .map_err(|e| CliError::Config(format!("key `init.particles_file`: {}: {e}", path.display())))?;
        if belief.dim() != self.dim {
            return Err(CliError::Config(format!(
                "key `init.particles_file`: particles have dimension {}, config has {}",
                belief.dim(),
                self.dim
            )));
        }
        Ok(InitialDistribution::Particles(belief))
    }

    pub fn design_params(&self) -> DesignParams<f64> {
        DesignParams {
            m: self.library.m,
            n_actions: self.library.n_actions,
            lloyd_iters: self.library.lloyd_iters,
            cover_radius: self.cover.radius,
            n_rollouts: self.cover.n_rollouts,
            rollout_horizon: self.cover.horizon,
            cover_cap: self.cover.cap,
            beta_schedule: self.solver.beta_schedule.clone(),
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            reference: self.solver.reference,
            filter: FilterSettings {
                n_particles: self.filter.n_particles,
                mass_floor: self.filter.mass_floor,
                exact_budget: self.filter.exact_budget,
            },
        }
    }
}
