use super::{EnvSpec, Environment};
use crate::error::{Error, Result};

/// Project `r` into `[range.0, range.1]`.
pub fn clip_reward(r: f64, range: (f64, f64)) -> f64 {
    r.clamp(range.0, range.1)
}

/// The last `depth` raw observations, oldest first, concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedObs {
    depth: usize,
    frame_len: usize,
    data: Vec<f64>,
}

impl StackedObs {
    /// A stack filled with `depth` copies of `frame`.
    pub fn filled(frame: &[f64], depth: usize) -> Self {
        let mut data = Vec::with_capacity(frame.len() * depth);
        for _ in 0..depth {
            data.extend_from_slice(frame);
        }
        Self {
            depth,
            frame_len: frame.len(),
            data,
        }
    }

    pub fn push(&mut self, frame: &[f64]) {
        debug_assert_eq!(frame.len(), self.frame_len);
        self.data.drain(..self.frame_len);
        self.data.extend_from_slice(frame);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn latest(&self) -> &[f64] {
        &self.data[self.data.len() - self.frame_len..]
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    /// Reward before clipping.
    pub raw_reward: f64,
    /// The episode was cut by the step cap rather than by the environment.
    pub truncated: bool,
    /// Steps taken in this episode, including this one.
    pub episode_step: usize,
}

/// One wrapped environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Stacked observation after the action.
    pub observation: StackedObs,
    pub action: usize,
    pub extrinsic_reward: f64,
    pub done: bool,
    pub info: Option<StepInfo>,
}

/// Applies frame stacking, reward clipping and the episode step cap to a
/// raw environment.
#[derive(Debug, Clone)]
pub struct EnvRunner {
    env: Box<dyn Environment>,
    spec: EnvSpec,
    frame_stack: usize,
    stack: Option<StackedObs>,
    episode_steps: usize,
    terminal: bool,
}

impl EnvRunner {
    pub fn new(env: Box<dyn Environment>, spec: EnvSpec, frame_stack: usize) -> Result<Self> {
        spec.validate()?;
        if frame_stack == 0 {
            return Err(Error::Config("frame_stack must be positive".into()));
        }
        Ok(Self {
            env,
            spec,
            frame_stack,
            stack: None,
            episode_steps: 0,
            terminal: true,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Length of a stacked observation.
    pub fn stacked_len(&self) -> usize {
        self.spec.observation_length * self.frame_stack
    }

    pub fn action_count(&self) -> usize {
        self.spec.action_count
    }

    pub fn episode_steps(&self) -> usize {
        self.episode_steps
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn current(&self) -> Option<&StackedObs> {
        self.stack.as_ref()
    }

    pub fn reset(&mut self) -> StackedObs {
        let frame = self.env.reset();
        let stack = StackedObs::filled(&frame, self.frame_stack);
        self.stack = Some(stack.clone());
        self.episode_steps = 0;
        self.terminal = false;
        stack
    }

    pub fn step(&mut self, action: usize) -> Result<Transition> {
        if self.terminal {
            return Err(Error::Usage("step called on a terminal episode; reset first".into()));
        }
        if action >= self.spec.action_count {
            return Err(Error::Usage(format!(
                "action {action} outside [0, {})",
                self.spec.action_count
            )));
        }
        let raw = self.env.step(action);
        if !raw.reward.is_finite() || raw.observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "{} produced a non-finite step",
                self.spec.name
            )));
        }
        self.episode_steps += 1;
        let truncated = !raw.done && self.episode_steps >= self.spec.max_episode_steps;
        let done = raw.done || truncated;
        self.terminal = done;
        let stack = self.stack.as_mut().expect("reset precedes step");
        stack.push(&raw.observation);
        Ok(Transition {
            observation: stack.clone(),
            action,
            extrinsic_reward: clip_reward(raw.reward, self.spec.reward_clip_range),
            done,
            info: Some(StepInfo {
                raw_reward: raw.reward,
                truncated,
                episode_step: self.episode_steps,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;

    fn chain(n: usize, cap: usize) -> EnvRunner {
        EnvConfig {
            chain_length: n,
            max_episode_steps: cap,
            ..EnvConfig::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_reward(0.5, (-1.0, 1.0)), 0.5);
        assert_eq!(clip_reward(3.0, (-1.0, 1.0)), 1.0);
        assert_eq!(clip_reward(-7.0, (-1.0, 1.0)), -1.0);
    }

    #[test]
    fn reset_fills_stack_with_initial_observation() {
        let mut env = chain(40, 100);
        let obs = env.reset();
        assert_eq!(obs.len(), 4 * 41);
        for k in 0..4 {
            let frame = &obs.as_slice()[k * 41..(k + 1) * 41];
            assert_eq!(frame[0], 1.0);
            assert_eq!(frame.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(chain(40, 100).reset(), obs);
    }

    #[test]
    fn stack_shifts_oldest_out() {
        let mut env = chain(5, 100);
        env.reset();
        let t = env.step(1).unwrap();
        let o = t.observation.as_slice();
        assert_eq!(o[0], 1.0);
        assert_eq!(t.observation.latest()[1], 1.0);
        assert_eq!(t.observation.latest()[0], 0.0);
    }

    #[test]
    fn episode_cap_terminates_and_step_after_terminal_fails() {
        let mut env = chain(40, 3);
        env.reset();
        assert!(!env.step(0).unwrap().done);
        assert!(!env.step(0).unwrap().done);
        let last = env.step(0).unwrap();
        assert!(last.done);
        assert!(last.info.unwrap().truncated);
        assert!(matches!(env.step(0), Err(Error::Usage(_))));
    }

    #[test]
    fn step_before_reset_and_bad_action_fail() {
        let mut env = chain(4, 10);
        assert!(env.step(0).is_err());
        env.reset();
        assert!(env.step(2).is_err());
    }

    #[test]
    fn unknown_environment_and_bad_spec_are_rejected() {
        let bad = EnvConfig {
            name: "pong".into(),
            ..EnvConfig::default()
        };
        assert!(bad.build().is_err());
        let bad = EnvConfig {
            max_episode_steps: 0,
            ..EnvConfig::default()
        };
        assert!(bad.build().is_err());
        let bad = EnvConfig {
            reward_clip_min: 1.0,
            reward_clip_max: -1.0,
            ..EnvConfig::default()
        };
        assert!(bad.build().is_err());
    }
}
