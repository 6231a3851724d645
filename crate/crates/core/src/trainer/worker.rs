use rand_chacha::ChaCha8Rng;

use crate::agent::{discounted_returns, AgentConfig, PolicyNet, RolloutStep};
use crate::envs::{EnvRunner, StackedObs};
use crate::error::{Error, Result};
use crate::nncore::Tensor;
use crate::poer::{refresh_priority, Batch, PendingEpisode, PriorityMode};
use crate::rnd::RndPair;

use super::rng_stream;

/// A finished episode as seen by one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub worker: usize,
    pub episode_id: u64,
    /// Sum of raw extrinsic rewards.
    pub total_reward: f64,
    pub length: usize,
    /// Sum of the extrinsic critic's estimates over the episode's steps.
    pub value_ext_sum: f64,
    pub truncated: bool,
    /// Environment steps consumed by the whole run when the episode ended.
    pub steps: u64,
    /// Parameter updates applied when the episode ended.
    pub updates: u64,
}

/// Everything private to one actor: its environment, the episode being
/// accumulated for classification and its random streams.
#[derive(Debug)]
pub struct WorkerState {
    pub index: usize,
    pub runner: EnvRunner,
    pub pending: PendingEpisode,
    /// Action sampling.
    pub act_rng: ChaCha8Rng,
    /// Buffer insertion, replay sampling and the replay count.
    pub replay_rng: ChaCha8Rng,
    obs: Option<StackedObs>,
    episode_id: u64,
    episode_reward: f64,
    episode_value: f64,
    next_batch: u64,
}

impl WorkerState {
    pub fn new(index: usize, runner: EnvRunner, seed: u64) -> Self {
        let base = 16 + 4 * index as u64;
        Self {
            index,
            runner,
            pending: PendingEpisode::new(),
            act_rng: rng_stream(seed, base),
            replay_rng: rng_stream(seed, base + 1),
            obs: None,
            episode_id: 0,
            episode_reward: 0.0,
            episode_value: 0.0,
            next_batch: 0,
        }
    }

    pub fn episode_id(&self) -> u64 {
        self.episode_id
    }
}

/// Result of collecting one batch.
#[derive(Debug, Clone)]
pub struct Collected {
    pub batch: Batch,
    pub finished: Option<EpisodeRecord>,
}

/// Act for up to `max_steps` steps, closing early at episode end. Each
/// next observation updates `rnd`'s normalizer before being scored. The
/// batch comes back with returns computed and priority Σ intrinsic reward.
pub fn collect_batch(
    worker: &mut WorkerState,
    net: &PolicyNet,
    rnd: &mut RndPair,
    agent: &AgentConfig,
    max_steps: usize,
) -> Result<Collected> {
    if max_steps == 0 {
        return Err(Error::Usage("a batch needs at least one step".into()));
    }
    let mut obs = match worker.obs.take() {
        Some(o) => o,
        None => {
            worker.episode_id += 1;
            worker.episode_reward = 0.0;
            worker.episode_value = 0.0;
            worker.runner.reset()
        }
    };
    let mut steps = Vec::with_capacity(max_steps);
    let mut finished = None;
    for _ in 0..max_steps {
        let act = net.act(obs.as_slice(), &mut worker.act_rng)?;
        let tr = worker.runner.step(act.action)?;
        let next = tr.observation;
        rnd.normalizer.update(next.as_slice());
        let reward_int = rnd.intrinsic_reward(next.as_slice())?;
        let info = tr.info.unwrap_or_default();
        worker.episode_reward += info.raw_reward;
        worker.episode_value += act.value_ext;
        steps.push(RolloutStep {
            obs: obs.as_slice().to_vec(),
            action: act.action,
            log_prob_old: act.log_prob,
            value_ext: act.value_ext,
            value_int: act.value_int,
            reward_ext: tr.extrinsic_reward,
            reward_int,
            done: tr.done,
        });
        obs = next;
        if tr.done {
            finished = Some(EpisodeRecord {
                worker: worker.index,
                episode_id: worker.episode_id,
                total_reward: worker.episode_reward,
                length: info.episode_step,
                value_ext_sum: worker.episode_value,
                truncated: info.truncated,
                steps: 0,
                updates: 0,
            });
            break;
        }
    }
    let final_obs = obs.as_slice().to_vec();
    if finished.is_none() {
        worker.obs = Some(obs);
    }
    worker.next_batch += 1;
    let mut batch = Batch {
        id: ((worker.index as u64) << 40) | worker.next_batch,
        worker: worker.index,
        episode_id: worker.episode_id,
        steps,
        final_obs,
        bootstrap_value_ext: 0.0,
        bootstrap_value_int: 0.0,
        returns_ext: Vec::new(),
        returns_int: Vec::new(),
        priority: 0.0,
        importance_class: None,
        insertion_index: None,
    };
    let (ve, vi) = net.values(&Tensor::new(vec![1, batch.final_obs.len()], batch.final_obs.clone())?)?;
    batch.bootstrap_value_ext = if batch.ends_episode() { 0.0 } else { ve[0] };
    batch.bootstrap_value_int = vi[0];
    compute_returns(&mut batch, agent)?;
    batch.priority = batch.intrinsic_total();
    Ok(Collected { batch, finished })
}

/// Batch-local returns. Extrinsic returns stop at episode ends; intrinsic
/// returns run through them unless configured episodic, always
/// bootstrapping from the critic's value of the final observation.
pub fn compute_returns(batch: &mut Batch, agent: &AgentConfig) -> Result<()> {
    let dones: Vec<bool> = batch.steps.iter().map(|s| s.done).collect();
    let re: Vec<f64> = batch.steps.iter().map(|s| s.reward_ext).collect();
    let ri: Vec<f64> = batch.steps.iter().map(|s| s.reward_int).collect();
    batch.returns_ext = discounted_returns(&re, &dones, batch.bootstrap_value_ext, agent.gamma_ext, true)?;
    batch.returns_int = discounted_returns(
        &ri,
        &dones,
        batch.bootstrap_value_int,
        agent.gamma_int,
        agent.intrinsic_episodic,
    )?;
    Ok(())
}

/// Make a stored batch trainable again: fresh intrinsic rewards and
/// priority, values and bootstraps from the current critics, recomputed
/// returns. Actions, observations, extrinsic rewards and `log_prob_old`
/// are kept as collected.
pub fn prepare_replayed_batch(
    batch: &Batch,
    net: &PolicyNet,
    rnd: &RndPair,
    agent: &AgentConfig,
    mode: PriorityMode,
) -> Result<Batch> {
    let mut b = refresh_priority(batch, rnd)?;
    let mut rows: Vec<&[f64]> = b.steps.iter().map(|s| s.obs.as_slice()).collect();
    rows.push(&b.final_obs);
    let (ve, vi) = net.values(&Tensor::from_rows(&rows)?)?;
    let n = b.len();
    for (t, step) in b.steps.iter_mut().enumerate() {
        step.value_ext = ve[t];
        step.value_int = vi[t];
    }
    b.bootstrap_value_ext = if b.ends_episode() { 0.0 } else { ve[n] };
    b.bootstrap_value_int = vi[n];
    compute_returns(&mut b, agent)?;
    if mode != PriorityMode::Intrinsic {
        b.priority = mode.priority(&b, &agent.loss())?;
    }
    Ok(b)
}
