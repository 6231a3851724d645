use serde::{Deserialize, Serialize};

use crate::agent::{advantage, mixed_advantage, LossConfig, RolloutStep};
use crate::error::Result;

/// Why a batch is worth replaying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImportanceClass {
    /// Some step carries a positive extrinsic reward.
    ContainsReward,
    /// A later batch of the same episode carries a positive extrinsic reward.
    LeadsToReward,
    /// The batch was unusually novel.
    MayLeadToUnseen,
}

impl ImportanceClass {
    pub const ALL: [ImportanceClass; 3] = [
        ImportanceClass::ContainsReward,
        ImportanceClass::LeadsToReward,
        ImportanceClass::MayLeadToUnseen,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ImportanceClass::ContainsReward => "contains_reward",
            ImportanceClass::LeadsToReward => "leads_to_reward",
            ImportanceClass::MayLeadToUnseen => "may_lead_to_unseen",
        }
    }
}

/// How replay priorities are derived from a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityMode {
    /// Sum of intrinsic rewards.
    #[default]
    Intrinsic,
    /// Constant 1 (no prioritization).
    Uniform,
    /// Sum of extrinsic rewards.
    Extrinsic,
    /// Sum of absolute mixed advantages.
    Advantage,
}

/// `B_s` consecutive steps of one episode: the unit of storage and replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Unique per run; identifies the batch across buffers and refreshes.
    pub id: u64,
    pub worker: usize,
    pub episode_id: u64,
    pub steps: Vec<RolloutStep>,
    /// Observation following the last step.
    pub final_obs: Vec<f64>,
    pub bootstrap_value_ext: f64,
    pub bootstrap_value_int: f64,
    pub returns_ext: Vec<f64>,
    pub returns_int: Vec<f64>,
    /// Sampling weight (depends on the priority mode).
    pub priority: f64,
    pub importance_class: Option<ImportanceClass>,
    pub insertion_index: Option<u64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observation that followed step `t`.
    pub fn next_obs(&self, t: usize) -> &[f64] {
        if t + 1 < self.steps.len() {
            &self.steps[t + 1].obs
        } else {
            &self.final_obs
        }
    }

    pub fn intrinsic_total(&self) -> f64 {
        self.steps.iter().map(|s| s.reward_int).sum()
    }

    pub fn extrinsic_total(&self) -> f64 {
        self.steps.iter().map(|s| s.reward_ext).sum()
    }

    pub fn has_positive_reward(&self) -> bool {
        self.steps.iter().any(|s| s.reward_ext > 0.0)
    }

    /// The batch closed because its episode ended.
    pub fn ends_episode(&self) -> bool {
        self.steps.last().is_some_and(|s| s.done)
    }

    pub fn mixed_advantages(&self, config: &LossConfig) -> Result<Vec<f64>> {
        let ve: Vec<f64> = self.steps.iter().map(|s| s.value_ext).collect();
        let vi: Vec<f64> = self.steps.iter().map(|s| s.value_int).collect();
        let ae = advantage(&self.returns_ext, &ve)?;
        let ai = advantage(&self.returns_int, &vi)?;
        mixed_advantage(&ae, &ai, config)
    }
}

impl PriorityMode {
    /// Priority of `batch` under this mode; always finite and ≥ 0.
    pub fn priority(self, batch: &Batch, config: &LossConfig) -> Result<f64> {
        let p = match self {
            PriorityMode::Intrinsic => batch.intrinsic_total(),
            PriorityMode::Uniform => 1.0,
            PriorityMode::Extrinsic => batch.extrinsic_total(),
            PriorityMode::Advantage => batch
                .mixed_advantages(config)?
                .iter()
                .map(|a| a.abs())
                .sum(),
        };
        Ok(if p.is_finite() { p.max(0.0) } else { 0.0 })
    }
}

/// Importance class of a finished batch, or `None` when it is not worth
/// storing. Precedence: contains reward, leads to reward, novel.
pub fn classify(
    batch: &Batch,
    episode_had_later_reward: bool,
    novelty_threshold: f64,
) -> Option<ImportanceClass> {
    if batch.has_positive_reward() {
        Some(ImportanceClass::ContainsReward)
    } else if episode_had_later_reward {
        Some(ImportanceClass::LeadsToReward)
    } else if batch.intrinsic_total() > novelty_threshold {
        Some(ImportanceClass::MayLeadToUnseen)
    } else {
        None
    }
}

/// Batches of an in-progress episode awaiting classification.
#[derive(Debug, Default)]
pub struct PendingEpisode {
    batches: Vec<Batch>,
    rewarded: bool,
}

impl PendingEpisode {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, batch: Batch) {
        self.rewarded |= batch.has_positive_reward();
        self.batches.push(batch);
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn any_reward(&self) -> bool {
        self.rewarded
    }

    /// Close the episode: each batch paired with whether a later batch of
    /// the episode was rewarded.
    pub fn flush(&mut self) -> Vec<(Batch, bool)> {
        let batches = std::mem::take(&mut self.batches);
        self.rewarded = false;
        let mut later = false;
        let mut out: Vec<(Batch, bool)> = Vec::with_capacity(batches.len());
        for b in batches.into_iter().rev() {
            let rewarded = b.has_positive_reward();
            out.push((b, later));
            later |= rewarded;
        }
        out.reverse();
        out
    }
}

/// Exponential moving average of batch novelty, used as the threshold for
/// [`ImportanceClass::MayLeadToUnseen`].
#[derive(Debug, Clone)]
pub struct NoveltyThreshold {
    decay: f64,
    average: Option<f64>,
}

impl NoveltyThreshold {
    pub fn new(decay: f64) -> Self {
        Self {
            decay,
            average: None,
        }
    }

    pub fn current(&self) -> Option<f64> {
        self.average
    }

    /// Threshold in force before `value`, then fold `value` in. The first
    /// observation is its own threshold.
    pub fn observe(&mut self, value: f64) -> f64 {
        let threshold = self.average.unwrap_or(value);
        self.average = Some(match self.average {
            None => value,
            Some(avg) => self.decay * avg + (1.0 - self.decay) * value,
        });
        threshold
    }
}
