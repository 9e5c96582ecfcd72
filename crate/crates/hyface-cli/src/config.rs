//! The JSON run-configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hyface_core::data::SyntheticSceneSpec;
use hyface_core::head::rig::RigSpec;
use hyface_nn::model::ModelConfig;
use hyface_nn::trainer::TrainConfig;

use crate::{Error, Result};

/// Everything a run can configure, in one document. Every section has full
/// defaults, so `{}` — or no config file at all — is valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Rig generation (`gen-data`).
    pub rig: RigSpec,
    /// Synthetic scene (`gen-data`).
    pub scene: SyntheticSceneSpec,
    /// Training hyperparameters (`train`).
    pub train: TrainConfig,
    /// Full model architecture; when absent, a desk-scale architecture is
    /// derived from the rig at `resolution`.
    pub model: Option<ModelConfig>,
    /// Desk-model resolution used when `model` is not given.
    pub resolution: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            rig: RigSpec::default(),
            scene: SyntheticSceneSpec::default(),
            train: TrainConfig::default(),
            model: None,
            resolution: 64,
        }
    }
}

impl CliConfig {
    /// Load and validate a config file; `None` means all defaults.
    pub fn load(path: Option<&Path>) -> Result<CliConfig> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| hyface_core::Error::io(path, e))?;
        let config: CliConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        if let Some(model) = &self.model {
            model.validate()?;
        }
        if self.resolution == 0 {
            return Err(Error::Validation("resolution must be positive".into()));
        }
        Ok(())
    }

    /// Apply a `--seed` override to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> CliConfig {
        if let Some(seed) = seed {
            self.rig.seed = seed;
            self.scene.seed = seed;
            self.train.seed = seed;
        }
        self
    }
}
