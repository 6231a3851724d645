use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::batch::Batch;
use crate::error::{Error, Result};
use crate::rnd::RndPair;

/// Number of stored batches to replay after each new batch, drawn from a
/// Poisson distribution with mean `replay_ratio`.
#[derive(Debug, Clone)]
pub struct ReplayScheduler {
    replay_ratio: f64,
    poisson: Option<Poisson<f64>>,
}

impl ReplayScheduler {
    pub fn new(replay_ratio: f64) -> Result<Self> {
        if !(replay_ratio >= 0.0) || !replay_ratio.is_finite() {
            return Err(Error::Config(format!("replay ratio {replay_ratio} must be ≥ 0")));
        }
        let poisson = if replay_ratio > 0.0 {
            Some(Poisson::new(replay_ratio).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            replay_ratio,
            poisson,
        })
    }

    pub fn replay_ratio(&self) -> f64 {
        self.replay_ratio
    }

    /// Zero without touching `rng` when the ratio is zero.
    pub fn replay_count(&self, rng: &mut impl Rng) -> usize {
        match &self.poisson {
            Some(p) => p.sample(rng) as usize,
            None => 0,
        }
    }
}

/// Recompute every step's intrinsic reward with the current RND (its
/// normalizer statistics are read, not updated) and set the priority to
/// their sum.
pub fn refresh_priority(batch: &Batch, rnd: &RndPair) -> Result<Batch> {
    let next: Vec<&[f64]> = (0..batch.len()).map(|t| batch.next_obs(t)).collect();
    let rewards = rnd.intrinsic_rewards(&next)?;
    let mut out = batch.clone();
    for (step, r) in out.steps.iter_mut().zip(rewards) {
        step.reward_int = r;
    }
    out.priority = out.intrinsic_total();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::RolloutStep;
    use crate::nncore::{AdamConfig, AdamState};
    use crate::rnd::{Phase, RndConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_ratio_never_replays() {
        let s = ReplayScheduler::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| s.replay_count(&mut rng) == 0));
        assert!(ReplayScheduler::new(-1.0).is_err());
    }

    #[test]
    fn half_ratio_replays_one_every_two() {
        let s = ReplayScheduler::new(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<usize> = (0..100_000).map(|_| s.replay_count(&mut rng)).collect();
        let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
        let p0 = draws.iter().filter(|&&k| k == 0).count() as f64 / draws.len() as f64;
        assert!((p0 - (-0.5f64).exp()).abs() < 0.005, "{p0}");
    }

    fn sample_batch(rnd: &RndPair, len: usize) -> Batch {
        let obs = |i: usize| {
            let mut o = vec![0.0; rnd.input_len()];
            o[i % rnd.input_len()] = 1.0;
            o
        };
        let steps: Vec<RolloutStep> = (0..len)
            .map(|i| RolloutStep {
                obs: obs(i),
                action: 0,
                log_prob_old: -0.7,
                value_ext: 0.0,
                value_int: 0.0,
                reward_ext: 0.0,
                reward_int: 0.0,
                done: false,
            })
            .collect();
        let mut b = Batch {
            id: 1,
            worker: 0,
            episode_id: 0,
            steps,
            final_obs: obs(len),
            bootstrap_value_ext: 0.0,
            bootstrap_value_int: 0.0,
            returns_ext: vec![0.0; len],
            returns_int: vec![0.0; len],
            priority: 0.0,
            importance_class: None,
            insertion_index: None,
        };
        b = refresh_priority(&b, rnd).unwrap();
        b
    }

    #[test]
    fn unchanged_rnd_keeps_priority() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rnd = RndPair::new(&RndConfig::default(), 6, &mut rng).unwrap();
        for i in 0..6 {
            let mut o = vec![0.0; 6];
            o[i] = 1.0;
            rnd.normalizer.update(&o);
        }
        let b = sample_batch(&rnd, 5);
        let again = refresh_priority(&b, &rnd).unwrap();
        assert!((again.priority - b.priority).abs() <= 1e-12);
        assert_eq!(again.priority, again.intrinsic_total());
    }

    #[test]
    fn training_on_batch_lowers_priority() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rnd = RndPair::new(&RndConfig::default(), 6, &mut rng).unwrap();
        for i in 0..6 {
            let mut o = vec![0.0; 6];
            o[i] = 1.0;
            rnd.normalizer.update(&o);
        }
        let b = sample_batch(&rnd, 5);
        let mut opt = AdamState::new(AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        });
        let next: Vec<&[f64]> = (0..b.len()).map(|t| b.next_obs(t)).collect();
        for _ in 0..200 {
            rnd.train_predictor(&next, &mut opt, Phase::Rollout, &mut rng).unwrap();
        }
        let refreshed = refresh_priority(&b, &rnd).unwrap();
        assert!(refreshed.priority < b.priority);
        // stored extrinsic data untouched
        for (a, o) in refreshed.steps.iter().zip(&b.steps) {
            assert_eq!((a.action, a.reward_ext, &a.obs, a.log_prob_old), (o.action, o.reward_ext, &o.obs, o.log_prob_old));
        }
    }
}
