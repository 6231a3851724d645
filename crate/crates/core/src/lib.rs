//! PPO with extrinsic and intrinsic critics, random network distillation
//! and prioritized oversampled experience replay, trained A3C-style on
//! toy hard-exploration environments.

pub mod agent;
pub mod envs;
pub mod error;
pub mod exec;
pub mod expcli;
pub mod nncore;
pub mod poer;
pub mod rnd;
pub mod trainer;

pub use error::{Error, Result};
