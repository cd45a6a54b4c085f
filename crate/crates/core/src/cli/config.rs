use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::PipelineConfig;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, TrainConfig};
use crate::synth::{ShiftMode, SynthSpec};
use crate::transfer::TransferPlan;

/// Targets written next to the source watershed by `generate`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub targets: Vec<ShiftMode>,
    /// Seed of the first target's own randomness; later targets add 1, 2, ...
    pub target_seed: Option<u64>,
}

/// Contents of a `--config` file. Every section is optional and falls back
/// to the library defaults. `model.grid_count` comes from the data and
/// `model.lag` from `pipeline.lag`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides `train.seed` and `transfer.seed` when set.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub synth: SynthSpec,
    pub generate: GenerateConfig,
    pub transfer: TransferPlan,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().replace('\n', " ")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Folds the global seed into the sections that carry their own.
    pub fn resolve(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.transfer.seed = seed;
        }
        self.model.lag = self.pipeline.lag;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
