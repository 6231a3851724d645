//! Prioritized oversampled experience replay: importance classes, three
//! class buffers with prioritized drop, proportional sampling, Poisson
//! replay scheduling and priority refresh.

mod batch;
mod buffer;
mod schedule;
mod shared;

use serde::{Deserialize, Serialize};

pub use batch::{classify, Batch, ImportanceClass, NoveltyThreshold, PendingEpisode, PriorityMode};
pub use buffer::{sample_for_replay, ClassBuffer, DropRule, EvictionReport, Evicted};
pub use schedule::{refresh_priority, ReplayScheduler};
pub use shared::{Sampled, SharedReplay, StoreReport};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoerConfig {
    /// Mean of the Poisson replay count per new batch.
    pub replay_ratio: f64,
    /// Probability that eviction targets the lowest priority.
    pub drop_probability: f64,
    pub buffer_capacity: usize,
    pub priority: PriorityMode,
    /// Decay of the novelty threshold's moving average.
    pub novelty_decay: f64,
}

impl Default for PoerConfig {
    fn default() -> Self {
        Self {
            replay_ratio: 0.5,
            drop_probability: 1.0,
            buffer_capacity: 128,
            priority: PriorityMode::Intrinsic,
            novelty_decay: 0.99,
        }
    }
}

impl PoerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.replay_ratio >= 0.0) {
            return Err(Error::Config("replay_ratio must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Config("drop_probability must lie in [0, 1]".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.novelty_decay) {
            return Err(Error::Config("novelty_decay must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
