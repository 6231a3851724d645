//! Small hard-exploration environments and the wrappers that stack
//! observations, clip rewards and cap episode length.

mod deep_chain;
mod key_door;
mod wrappers;

use serde::{Deserialize, Serialize};

pub use deep_chain::DeepChain;
pub use key_door::KeyDoorGrid;
pub use wrappers::{clip_reward, EnvRunner, StackedObs, StepInfo, Transition};

use crate::error::{Error, Result};

/// Raw environment outcome before wrapping.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A deterministic, single-agent episodic environment with a discrete
/// action set. Implementations own all their state; clones are independent.
pub trait Environment: Send + std::fmt::Debug {
    fn name(&self) -> &str;
    fn observation_length(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Return to the initial state and emit its observation.
    fn reset(&mut self) -> Vec<f64>;
    /// Apply `action` (already validated to be in range).
    fn step(&mut self, action: usize) -> RawStep;
    fn box_clone(&self) -> Box<dyn Environment>;
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Static description of a wrapped environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    /// Length of one raw (unstacked) observation.
    pub observation_length: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub reward_clip_range: (f64, f64),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be positive".into()));
        }
        let (lo, hi) = self.reward_clip_range;
        if !(lo <= hi) {
            return Err(Error::Config(format!("reward clip range [{lo}, {hi}] is not ordered")));
        }
        Ok(())
    }
}

/// Environment selection and wrapper settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// `deep_chain` or `key_door`.
    pub name: String,
    pub chain_length: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub key_bonus: bool,
    pub frame_stack: usize,
    pub max_episode_steps: usize,
    pub reward_clip_min: f64,
    pub reward_clip_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: "deep_chain".into(),
            chain_length: 40,
            grid_width: 7,
            grid_height: 7,
            key_bonus: false,
            frame_stack: 4,
            max_episode_steps: 3000,
            reward_clip_min: -1.0,
            reward_clip_max: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn build_raw(&self) -> Result<Box<dyn Environment>> {
        match self.name.as_str() {
            "deep_chain" => Ok(Box::new(DeepChain::new(self.chain_length)?)),
            "key_door" => Ok(Box::new(KeyDoorGrid::new(
                self.grid_width,
                self.grid_height,
                self.key_bonus,
            )?)),
            other => Err(Error::Config(format!("unknown environment '{other}'"))),
        }
    }

    pub fn build(&self) -> Result<EnvRunner> {
        let env = self.build_raw()?;
        let spec = EnvSpec {
            name: env.name().to_string(),
            observation_length: env.observation_length(),
            action_count: env.action_count(),
            max_episode_steps: self.max_episode_steps,
            reward_clip_range: (self.reward_clip_min, self.reward_clip_max),
        };
        EnvRunner::new(env, spec, self.frame_stack)
    }
}
