use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::experts::remote::RemoteConfig;
use crate::metrics::SUCCESS_RADIUS;
use crate::perception::{NoiseModel, PerceptionConfig};
use crate::sampler::SamplerConfig;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExpertBackend {
    #[default]
    Scripted,
    Remote,
    Cassette,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub disable_spe: bool,
    pub disable_exploration: bool,
}

/// Per-run overrides of the episode budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub max_decision_steps: Option<usize>,
    pub max_primitives: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub expert: ExpertBackend,
    pub cassette: Option<PathBuf>,
    pub remote: RemoteConfig,
    pub noise: NoiseModel,
    pub ablations: Ablations,
    pub budgets: Budgets,
    pub perception: PerceptionConfig,
    pub sampler: SamplerConfig,
    pub success_radius: f64,
    /// Lexicon file; the bundled one when absent.
    pub lexicon: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            expert: ExpertBackend::Scripted,
            cassette: None,
            remote: RemoteConfig::default(),
            noise: NoiseModel::none(),
            ablations: Ablations::default(),
            budgets: Budgets::default(),
            perception: PerceptionConfig::default(),
            sampler: SamplerConfig::default(),
            success_radius: SUCCESS_RADIUS,
            lexicon: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.expert == ExpertBackend::Cassette && self.cassette.is_none() {
            return Err(HarnessError::Config("cassette backend requires a cassette path".into()));
        }
        if self.budgets.max_decision_steps == Some(0) || self.budgets.max_primitives == Some(0) {
            return Err(HarnessError::Config("budgets must be positive".into()));
        }
        for (name, p) in [("p_drop", self.noise.p_drop), ("p_spur", self.noise.p_spur)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.success_radius > 0.0) {
            return Err(HarnessError::Config("success_radius must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
