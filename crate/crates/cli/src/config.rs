//! TOML experiment configuration.
//!
//! ```toml
//! experiment = "reaction_diffusion"
//! seed = 7
//! out = "results/rd"
//!
//! [reaction_diffusion]
//! train_trajectories = 200
//! ```
//!
//! Every section is optional and defaults to the reference setup. Unknown keys are rejected.

use crate::{CliError, CliResult};
use modcomb::combiner::CombinationConfig;
use modcomb::mpc::{BenchmarkConfig, Structure};
use modcomb::studies::{NuRateConfig, ReactionDiffusionConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENV_OUT: &str = "MODCOMB_OUT";
pub const ENV_SEED: &str = "MODCOMB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    NuRate,
    ReactionDiffusion,
    ToySuboptimality,
    MpcCompare,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::NuRate,
        ExperimentId::ReactionDiffusion,
        ExperimentId::ToySuboptimality,
        ExperimentId::MpcCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::NuRate => "nu_rate",
            ExperimentId::ReactionDiffusion => "reaction_diffusion",
            ExperimentId::ToySuboptimality => "toy_suboptimality",
            ExperimentId::MpcCompare => "mpc_compare",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::NuRate => "convergence rate of the combination on 2D diffusion stencils against ν",
            ExperimentId::ReactionDiffusion => "1D reaction-diffusion: linear, Koopman, residual and iterative models",
            ExperimentId::ToySuboptimality => "single-pass residual learning versus iteration on the plane example",
            ExperimentId::MpcCompare => "tracking MPC with linear, hybrid and nonlinear lifted predictors",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub combiner: CombinationConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            combiner: CombinationConfig {
                epsilon: 1e-12,
                ..CombinationConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcCompareConfig {
    /// Seeds `seed, seed + 1, …, seed + seeds − 1`.
    pub seeds: u64,
    pub structures: Vec<Structure>,
    pub benchmark: BenchmarkConfig,
}

impl Default for MpcCompareConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            structures: Structure::ALL.to_vec(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Writes wall-clock solve times; off by default so outputs are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub nu_rate: NuRateConfig,
    #[serde(default)]
    pub reaction_diffusion: ReactionDiffusionConfig,
    #[serde(default)]
    pub toy_suboptimality: ToyConfig,
    #[serde(default)]
    pub mpc_compare: MpcCompareConfig,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            seed: 0,
            out: default_out(),
            record_wall_time: false,
            nu_rate: NuRateConfig::default(),
            reaction_diffusion: ReactionDiffusionConfig::default(),
            toy_suboptimality: ToyConfig::default(),
            mpc_compare: MpcCompareConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |e: modcomb::Error| CliError::Config(e.to_string());
        if i64::try_from(self.seed).is_err() {
            return Err(CliError::Config("seed must fit in a signed 64-bit integer".into()));
        }
        self.nu_rate.validate().map_err(bad)?;
        self.reaction_diffusion.validate().map_err(bad)?;
        self.toy_suboptimality.combiner.validate().map_err(bad)?;
        self.mpc_compare.benchmark.validate().map_err(bad)?;
        if self.mpc_compare.seeds == 0 {
            return Err(CliError::Config("mpc_compare.seeds must be positive".into()));
        }
        if self.mpc_compare.structures.is_empty() {
            return Err(CliError::Config("mpc_compare.structures is empty".into()));
        }
        Ok(())
    }

    /// Applies overrides with precedence flag > environment > file.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        out: Option<PathBuf>,
        env: impl Fn(&str) -> Option<String>,
    ) -> CliResult<()> {
        if let Some(v) = env(ENV_SEED) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{ENV_SEED}={v:?} is not a seed")))?;
        }
        if let Some(v) = env(ENV_OUT) {
            self.out = PathBuf::from(v);
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        self.validate()
    }
}
