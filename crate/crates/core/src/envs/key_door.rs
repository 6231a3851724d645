use super::{Environment, RawStep};
use crate::error::{Error, Result};

/// A `width × height` grid. The agent starts in the top-left corner, the
/// key lies in the bottom-left corner and the door in the top-right corner.
/// Stepping onto the door while holding the key pays +1 and ends the
/// episode; stepping onto it without the key does nothing. Picking up the
/// key pays `0.1` when the key bonus is enabled.
///
/// The observation is a one-hot agent position followed by a key flag.
#[derive(Debug, Clone)]
pub struct KeyDoorGrid {
    width: usize,
    height: usize,
    key_bonus: bool,
    agent: (usize, usize),
    has_key: bool,
}

impl KeyDoorGrid {
    pub const UP: usize = 0;
    pub const DOWN: usize = 1;
    pub const LEFT: usize = 2;
    pub const RIGHT: usize = 3;
    pub const KEY_BONUS: f64 = 0.1;

    pub fn new(width: usize, height: usize, key_bonus: bool) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Config("key-door grid needs at least 2x2 cells".into()));
        }
        Ok(Self {
            width,
            height,
            key_bonus,
            agent: (0, 0),
            has_key: false,
        })
    }

    pub fn start(&self) -> (usize, usize) {
        (0, 0)
    }

    pub fn key_cell(&self) -> (usize, usize) {
        (0, self.height - 1)
    }

    pub fn door_cell(&self) -> (usize, usize) {
        (self.width - 1, 0)
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.width * self.height + 1];
        obs[self.agent.1 * self.width + self.agent.0] = 1.0;
        obs[self.width * self.height] = if self.has_key { 1.0 } else { 0.0 };
        obs
    }
}

impl Environment for KeyDoorGrid {
    fn name(&self) -> &str {
        "key_door"
    }

    fn observation_length(&self) -> usize {
        self.width * self.height + 1
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self) -> Vec<f64> {
        self.agent = self.start();
        self.has_key = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> RawStep {
        let (x, y) = self.agent;
        self.agent = match action {
            Self::UP => (x, y.saturating_sub(1)),
            Self::DOWN => (x, (y + 1).min(self.height - 1)),
            Self::LEFT => (x.saturating_sub(1), y),
            _ => ((x + 1).min(self.width - 1), y),
        };
        let mut reward = 0.0;
        let mut done = false;
        if self.agent == self.key_cell() && !self.has_key {
            self.has_key = true;
            if self.key_bonus {
                reward = Self::KEY_BONUS;
            }
        } else if self.agent == self.door_cell() && self.has_key {
            reward = 1.0;
            done = true;
        }
        RawStep {
            observation: self.observation(),
            reward,
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

    fn walk(env: &mut KeyDoorGrid, action: usize, n: usize) -> Vec<RawStep> {
        (0..n).map(|_| env.step(action)).collect()
    }

    #[test]
    fn reset_places_agent_at_start_without_key() {
        let mut env = KeyDoorGrid::new(5, 4, false).unwrap();
        env.step(KeyDoorGrid::DOWN);
        let obs = env.reset();
        assert_eq!(env.agent(), (0, 0));
        assert!(!env.has_key());
        assert_eq!(obs[0], 1.0);
        assert_eq!(obs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn door_without_key_does_nothing() {
        let mut env = KeyDoorGrid::new(5, 4, false).unwrap();
        env.reset();
        let steps = walk(&mut env, KeyDoorGrid::RIGHT, 4);
        assert_eq!(env.agent(), env.door_cell());
        assert!(steps.iter().all(|s| s.reward == 0.0 && !s.done));
    }

    #[test]
    fn scripted_shortest_path_opens_door() {
        let (w, h) = (5, 4);
        let mut env = KeyDoorGrid::new(w, h, true).unwrap();
        env.reset();
        let down = walk(&mut env, KeyDoorGrid::DOWN, h - 1);
        assert_eq!(down.last().unwrap().reward, KeyDoorGrid::KEY_BONUS);
        assert!(env.has_key());
        walk(&mut env, KeyDoorGrid::UP, h - 1);
        let right = walk(&mut env, KeyDoorGrid::RIGHT, w - 1);
        let last = right.last().unwrap();
        assert_eq!((last.reward, last.done), (1.0, true));
        let total: f64 = down.iter().chain(&right).map(|s| s.reward).sum();
        assert!((total - 1.1).abs() < 1e-12);
    }

    #[test]
    fn key_bonus_disabled_pays_nothing_for_key() {
        let mut env = KeyDoorGrid::new(3, 3, false).unwrap();
        env.reset();
        let down = walk(&mut env, KeyDoorGrid::DOWN, 2);
        assert!(env.has_key());
        assert!(down.iter().all(|s| s.reward == 0.0));
    }
}
