use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::TimeAxis;
use crate::agent::AgentConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::nncore::AdamConfig;
use crate::poer::PoerConfig;
use crate::rnd::RndConfig;
use crate::trainer::{TrainSetup, TrainerConfig};

/// `[metrics]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Episodes in the sliding window.
    pub window: usize,
    pub time_axis: TimeAxis,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            window: 50,
            time_axis: TimeAxis::Updates,
        }
    }
}

/// A complete run description, one TOML section per module.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub rnd: RndConfig,
    pub poer: PoerConfig,
    pub optim: AdamConfig,
    pub trainer: TrainerConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::file(path, e))
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            seed: self.seed,
            env: self.env.clone(),
            agent: self.agent.clone(),
            rnd: self.rnd.clone(),
            poer: self.poer.clone(),
            optim: self.optim,
            trainer: self.trainer.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.window == 0 {
            return Err(Error::Config("metrics.window must be positive".into()));
        }
        self.setup().validate()
    }

    /// Set an existing dotted key such as `poer.replay_ratio`.
    pub fn set(&mut self, key: &str, value: toml::Value) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))?;
        }
        *slot = value;
        *self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}
