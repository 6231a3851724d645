//! Actor-critic with one policy head and two value heads, plus the PPO
//! clipped surrogate, the clipped value objective and return arithmetic.

mod losses;
mod policy;
mod returns;

use serde::{Deserialize, Serialize};

pub use losses::{entropy, ppo_actor_loss, ppo_actor_terms, pvo_critic_loss, pvo_critic_terms};
pub use policy::{ActOutput, PolicyNet, PolicyOutput, TapeOutput};
pub use returns::{advantage, discounted_returns, mixed_advantage};

use crate::error::{Error, Result};

/// Loss and return coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub clip_epsilon: f64,
    pub entropy_beta: f64,
    pub critic_coef: f64,
    pub gamma_ext: f64,
    pub gamma_int: f64,
    pub adv_weight_ext: f64,
    pub adv_weight_int: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.1,
            entropy_beta: 0.001,
            critic_coef: 0.5,
            gamma_ext: 0.999,
            gamma_int: 0.99,
            adv_weight_ext: 2.0,
            adv_weight_int: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0) {
            return Err(Error::Config("clip_epsilon must be positive".into()));
        }
        if !(self.entropy_beta >= 0.0) {
            return Err(Error::Config("entropy_beta must be non-negative".into()));
        }
        for (name, g) in [("gamma_ext", self.gamma_ext), ("gamma_int", self.gamma_int)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("{name} = {g} outside [0, 1]")));
            }
        }
        if !(self.adv_weight_ext > self.adv_weight_int) {
            return Err(Error::Config(
                "the extrinsic advantage weight must exceed the intrinsic one".into(),
            ));
        }
        Ok(())
    }
}

/// `[agent]` section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub clip_epsilon: f64,
    pub entropy_beta: f64,
    pub critic_coef: f64,
    pub gamma_ext: f64,
    pub gamma_int: f64,
    pub adv_weight_ext: f64,
    pub adv_weight_int: f64,
    /// Stop intrinsic returns at episode boundaries.
    pub intrinsic_episodic: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            hidden: 64,
            hidden_layers: 2,
            clip_epsilon: l.clip_epsilon,
            entropy_beta: l.entropy_beta,
            critic_coef: l.critic_coef,
            gamma_ext: l.gamma_ext,
            gamma_int: l.gamma_int,
            adv_weight_ext: l.adv_weight_ext,
            adv_weight_int: l.adv_weight_int,
            intrinsic_episodic: false,
        }
    }
}

impl AgentConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            clip_epsilon: self.clip_epsilon,
            entropy_beta: self.entropy_beta,
            critic_coef: self.critic_coef,
            gamma_ext: self.gamma_ext,
            gamma_int: self.gamma_int,
            adv_weight_ext: self.adv_weight_ext,
            adv_weight_int: self.adv_weight_int,
        }
    }
}

/// One collected environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub obs: Vec<f64>,
    pub action: usize,
    pub log_prob_old: f64,
    pub value_ext: f64,
    pub value_int: f64,
    pub reward_ext: f64,
    /// Intrinsic reward of the observation that followed this step.
    pub reward_int: f64,
    pub done: bool,
}
