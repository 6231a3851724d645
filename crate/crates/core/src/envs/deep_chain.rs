use super::{Environment, RawStep};
use crate::error::{Error, Result};

/// A corridor of `length` moves. Action 1 advances one cell, action 0
/// sends the agent back to cell 0. Reaching cell `length` pays 1 and ends
/// the episode; no other transition is rewarded.
#[derive(Debug, Clone)]
pub struct DeepChain {
    length: usize,
    position: usize,
}

impl DeepChain {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;

    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("chain length must be positive".into()));
        }
        Ok(Self {
            length,
            position: 0,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.length + 1];
        obs[self.position] = 1.0;
        obs
    }
}

impl Environment for DeepChain {
    fn name(&self) -> &str {
        "deep_chain"
    }

    fn observation_length(&self) -> usize {
        self.length + 1
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Vec<f64> {
        self.position = 0;
        self.observation()
    }

    fn step(&mut self, action: usize) -> RawStep {
        if action == Self::RIGHT {
            self.position += 1;
        } else {
            self.position = 0;
        }
        let done = self.position == self.length;
        RawStep {
            observation: self.observation(),
            reward: if done { 1.0 } else { 0.0 },
            done,
        }
    }

    fn box_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_rights_reach_the_goal() {
        let mut env = DeepChain::new(5).unwrap();
        env.reset();
        let steps: Vec<RawStep> = (0..5).map(|_| env.step(DeepChain::RIGHT)).collect();
        assert!(steps[..4].iter().all(|s| s.reward == 0.0 && !s.done));
        assert_eq!(steps[4].reward, 1.0);
        assert!(steps[4].done);
    }

    #[test]
    fn left_at_origin_stays() {
        let mut env = DeepChain::new(5).unwrap();
        env.reset();
        let s = env.step(DeepChain::LEFT);
        assert_eq!((s.reward, s.done, env.position()), (0.0, false, 0));
    }

    #[test]
    fn left_resets_progress() {
        let mut env = DeepChain::new(5).unwrap();
        env.reset();
        env.step(DeepChain::RIGHT);
        env.step(DeepChain::RIGHT);
        env.step(DeepChain::LEFT);
        assert_eq!(env.position(), 0);
    }

    /// Exhaustive check over all action sequences of length n: exactly one
    /// reaches the goal, so a uniform policy succeeds with (1/2)^n.
    #[test]
    fn only_all_right_sequence_is_rewarded() {
        for n in 1..=8usize {
            let mut rewarded = 0u32;
            for code in 0u32..(1 << n) {
                let mut env = DeepChain::new(n).unwrap();
                env.reset();
                let mut total = 0.0;
                for bit in 0..n {
                    let s = env.step(((code >> bit) & 1) as usize);
                    total += s.reward;
                    if s.done {
                        break;
                    }
                }
                if total > 0.0 {
                    assert_eq!(total, 1.0);
                    rewarded += 1;
                }
            }
            assert_eq!(rewarded, 1, "n = {n}");
        }
    }
}
