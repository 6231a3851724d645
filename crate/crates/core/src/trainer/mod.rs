//! Rollout collection, replay preparation, delayed training on
//! super-batches and Hogwild updates of shared parameters by several
//! workers, plus a deterministic round-robin mode.

mod shared;
mod update;
mod worker;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use shared::{SharedModel, StepBudget};
pub use update::{super_batch_gradients, LossReport, Model, SuperBatchItem};
pub use worker::{
    collect_batch, compute_returns, prepare_replayed_batch, Collected, EpisodeRecord, WorkerState,
};

use crate::agent::{AgentConfig, PolicyNet};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nncore::{io, AdamConfig, Parameterized};
use crate::poer::{PoerConfig, PriorityMode, ReplayScheduler, SharedReplay};
use crate::rnd::{ObsNormalizer, RndConfig, RndPair};
use shared::lock;

/// `[trainer]` section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub workers: usize,
    /// Steps per batch.
    pub batch_steps: usize,
    /// Batches per super-batch.
    pub super_batch: usize,
    pub total_steps: u64,
    /// Gradient passes per super-batch.
    pub epochs: usize,
    /// Round-robin single-thread execution.
    pub sync: bool,
    /// Write a checkpoint every this many updates; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            batch_steps: 64,
            super_batch: 64,
            total_steps: 1_000_000,
            epochs: 1,
            sync: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.batch_steps == 0 || self.super_batch == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "workers, batch_steps, super_batch and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to start a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSetup {
    pub seed: u64,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub rnd: RndConfig,
    pub poer: PoerConfig,
    pub optim: AdamConfig,
    pub trainer: TrainerConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.poer.validate()?;
        self.agent.loss().validate()?;
        self.env.build().map(|_| ())
    }
}

/// Independent random stream `index` of a run seeded with `seed`.
/// Stream 0 initializes the networks, stream 1 draws dropout seeds, and
/// worker `w` owns streams `16 + 4w` (actions) and `17 + 4w` (replay).
pub fn rng_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One dropout seed per super-batch item.
pub fn dropout_seeds(rng: &mut impl Rng, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.random()).collect()
}

/// Networks a run with `setup` starts from.
pub fn initial_models(setup: &TrainSetup) -> Result<(PolicyNet, RndPair)> {
    let runner = setup.env.build()?;
    let mut rng = rng_stream(setup.seed, 0);
    let net = PolicyNet::new(
        runner.stacked_len(),
        runner.action_count(),
        setup.agent.hidden,
        setup.agent.hidden_layers,
        &mut rng,
    )?;
    let rnd = RndPair::new(&setup.rnd, runner.stacked_len(), &mut rng)?;
    Ok((net, rnd))
}

/// Bookkeeping of one parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: u64,
    pub steps: u64,
    pub fresh: usize,
    pub replayed: usize,
    pub loss: LossReport,
    pub policy_checksum: u64,
    pub predictor_checksum: u64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateRecord>,
    pub fresh_batches: u64,
    pub replayed_batches: u64,
    pub buffer_lens: [usize; 3],
    pub buffer_dump: String,
    pub net: PolicyNet,
    pub rnd: RndPair,
}

/// A run that stopped early, with everything recorded up to that point.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct TrainError {
    pub error: Error,
    pub partial: Box<RunSummary>,
}

struct Assembly {
    items: Vec<SuperBatchItem>,
    dropout_rng: ChaCha8Rng,
}

#[derive(Default)]
struct Sink {
    episodes: Vec<EpisodeRecord>,
    updates: Vec<UpdateRecord>,
}

/// A configured run.
pub struct Trainer {
    setup: TrainSetup,
    exec: Exec,
    checkpoint_dir: Option<PathBuf>,
    net: PolicyNet,
    rnd: RndPair,
    shared: SharedModel,
    replay: SharedReplay,
    scheduler: ReplayScheduler,
    budget: StepBudget,
    assembly: Mutex<Assembly>,
    sink: Mutex<Sink>,
    fresh: AtomicU64,
    replayed: AtomicU64,
    abort: AtomicBool,
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        setup.validate()?;
        let (net, rnd) = initial_models(&setup)?;
        Ok(Self {
            shared: SharedModel::new(&net, &rnd, setup.optim),
            replay: SharedReplay::new(&setup.poer),
            scheduler: ReplayScheduler::new(setup.poer.replay_ratio)?,
            budget: StepBudget::new(setup.trainer.total_steps),
            assembly: Mutex::new(Assembly {
                items: Vec::new(),
                dropout_rng: rng_stream(setup.seed, 1),
            }),
            sink: Mutex::new(Sink::default()),
            fresh: AtomicU64::new(0),
            replayed: AtomicU64::new(0),
            abort: AtomicBool::new(false),
            exec: Exec::default(),
            checkpoint_dir: None,
            net,
            rnd,
            setup,
        })
    }

    /// How per-batch gradients inside one update are computed.
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Directory receiving checkpoints every `checkpoint_every` updates.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn run(self) -> std::result::Result<RunSummary, TrainError> {
        let outcome = if self.setup.trainer.sync {
            self.run_sync()
        } else {
            self.run_async()
        };
        let outcome = outcome.and_then(|()| self.flush_remaining());
        let summary = self.summary();
        match outcome {
            Ok(()) => Ok(summary),
            Err(error) => Err(TrainError {
                error,
                partial: Box::new(summary),
            }),
        }
    }

    fn new_worker(&self, index: usize) -> Result<WorkerState> {
        Ok(WorkerState::new(index, self.setup.env.build()?, self.setup.seed))
    }

    fn run_sync(&self) -> Result<()> {
        let n = self.setup.trainer.workers;
        let mut workers = (0..n).map(|i| self.new_worker(i)).collect::<Result<Vec<_>>>()?;
        let mut locals: Vec<(PolicyNet, RndPair)> = (0..n).map(|_| (self.net.clone(), self.rnd.clone())).collect();
        let mut active = vec![true; n];
        while active.iter().any(|&a| a) {
            for w in 0..n {
                if !active[w] {
                    continue;
                }
                let (net, rnd) = &mut locals[w];
                let worker = &mut workers[w];
                match catch_unwind(AssertUnwindSafe(|| self.tick(worker, net, rnd))) {
                    Ok(Ok(more)) => active[w] = more,
                    Ok(Err(e)) => return Err(e),
                    Err(_) => return Err(Error::Contract(format!("worker {w} panicked"))),
                }
            }
        }
        Ok(())
    }

    fn run_async(&self) -> Result<()> {
        let n = self.setup.trainer.workers;
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|w| {
                    let failure = &failure;
                    scope.spawn(move || {
                        let result = self.new_worker(w).and_then(|mut worker| {
                            let (mut net, mut rnd) = (self.net.clone(), self.rnd.clone());
                            while !self.abort.load(Ordering::SeqCst) {
                                if !self.tick(&mut worker, &mut net, &mut rnd)? {
                                    break;
                                }
                            }
                            Ok(())
                        });
                        if let Err(e) = result {
                            self.abort.store(true, Ordering::SeqCst);
                            lock(failure).get_or_insert(e);
                        }
                    })
                })
                .collect();
            for (w, h) in handles.into_iter().enumerate() {
                if h.join().is_err() {
                    self.abort.store(true, Ordering::SeqCst);
                    lock(&failure).get_or_insert(Error::Contract(format!("worker {w} panicked")));
                }
            }
        });
        match failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// One worker iteration: collect a batch, file a finished episode into
    /// the class buffers, replay `k` stored batches and submit everything
    /// to the super-batch. Returns false once the step budget is spent.
    fn tick(&self, worker: &mut WorkerState, net: &mut PolicyNet, rnd: &mut RndPair) -> Result<bool> {
        let cfg = &self.setup.trainer;
        let granted = self.budget.reserve(cfg.batch_steps as u64);
        if granted == 0 {
            return Ok(false);
        }
        self.shared.snapshot_into(net, rnd);
        let collected = collect_batch(worker, net, rnd, &self.setup.agent, granted as usize)?;
        let fresh = collected.batch;
        let used = fresh.len() as u64;
        self.budget.refund(granted - used);
        let steps_now = self.budget.consume(used);
        let next: Vec<&[f64]> = (0..fresh.len()).map(|t| fresh.next_obs(t)).collect();
        self.shared.observe(&next);
        if let Some(mut ep) = collected.finished {
            ep.steps = steps_now;
            ep.updates = self.shared.step_count();
            lock(&self.sink).episodes.push(ep);
        }

        worker.pending.push(fresh.clone());
        if fresh.ends_episode() {
            let mode = self.setup.poer.priority;
            let loss = self.setup.agent.loss();
            let mut flushed = worker.pending.flush();
            if mode != PriorityMode::Intrinsic {
                for (b, _) in &mut flushed {
                    b.priority = mode.priority(b, &loss)?;
                }
            }
            self.replay.store_episode(flushed, &mut worker.replay_rng);
        }

        let k = self.scheduler.replay_count(&mut worker.replay_rng);
        let mut replayed = Vec::with_capacity(k);
        for _ in 0..k {
            if let Some(s) = self.replay.sample_for_replay(&mut worker.replay_rng) {
                let prepared =
                    prepare_replayed_batch(&s.batch, net, rnd, &self.setup.agent, self.setup.poer.priority)?;
                self.replay.refresh(s.class, prepared.clone());
                replayed.push(prepared);
            }
        }

        self.fresh.fetch_add(1, Ordering::SeqCst);
        self.submit(SuperBatchItem { batch: fresh, replayed: false }, net, rnd)?;
        for batch in replayed {
            self.replayed.fetch_add(1, Ordering::SeqCst);
            self.submit(SuperBatchItem { batch, replayed: true }, net, rnd)?;
        }
        Ok(true)
    }

    fn submit(&self, item: SuperBatchItem, net: &mut PolicyNet, rnd: &mut RndPair) -> Result<()> {
        let full = {
            let mut a = lock(&self.assembly);
            a.items.push(item);
            if a.items.len() >= self.setup.trainer.super_batch {
                let items = std::mem::take(&mut a.items);
                let seeds = dropout_seeds(&mut a.dropout_rng, items.len());
                Some((items, seeds))
            } else {
                None
            }
        };
        match full {
            Some((items, seeds)) => self.train(&items, &seeds, net, rnd),
            None => Ok(()),
        }
    }

    fn flush_remaining(&self) -> Result<()> {
        let (items, seeds) = {
            let mut a = lock(&self.assembly);
            let items = std::mem::take(&mut a.items);
            let seeds = dropout_seeds(&mut a.dropout_rng, items.len());
            (items, seeds)
        };
        if items.is_empty() {
            return Ok(());
        }
        let (mut net, mut rnd) = (self.net.clone(), self.rnd.clone());
        self.shared.snapshot_into(&mut net, &mut rnd);
        self.train(&items, &seeds, &mut net, &mut rnd)
    }

    fn train(&self, items: &[SuperBatchItem], seeds: &[u64], net: &mut PolicyNet, rnd: &mut RndPair) -> Result<()> {
        let loss_cfg = self.setup.agent.loss();
        for epoch in 0..self.setup.trainer.epochs {
            if epoch > 0 {
                self.shared.snapshot_into(net, rnd);
            }
            let (grads, loss) = super_batch_gradients(items, seeds, net, rnd, &loss_cfg, self.exec)
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!(
                        "{msg}\nreplay buffers at abort:\n{}",
                        self.replay.dump()
                    )),
                    other => other,
                })?;
            self.shared.apply(&grads)?;
            self.shared.snapshot_into(net, rnd);
            let update = self.shared.step_count();
            lock(&self.sink).updates.push(UpdateRecord {
                update,
                steps: self.budget.used(),
                fresh: items.iter().filter(|i| !i.replayed).count(),
                replayed: items.iter().filter(|i| i.replayed).count(),
                loss,
                policy_checksum: net.checksum(),
                predictor_checksum: rnd.predictor_checksum(),
            });
            let every = self.setup.trainer.checkpoint_every;
            if let Some(dir) = &self.checkpoint_dir {
                if every > 0 && update % every == 0 {
                    save_checkpoint(&dir.join(format!("update-{update:08}")), net, rnd)?;
                }
            }
        }
        Ok(())
    }

    fn summary(&self) -> RunSummary {
        let (mut net, mut rnd) = (self.net.clone(), self.rnd.clone());
        self.shared.snapshot_into(&mut net, &mut rnd);
        let sink = lock(&self.sink);
        let mut episodes = sink.episodes.clone();
        episodes.sort_by_key(|e| e.steps);
        RunSummary {
            steps: self.budget.used(),
            episodes,
            updates: sink.updates.clone(),
            fresh_batches: self.fresh.load(Ordering::SeqCst),
            replayed_batches: self.replayed.load(Ordering::SeqCst),
            buffer_lens: self.replay.lens(),
            buffer_dump: self.replay.dump(),
            net,
            rnd,
        }
    }
}

const CHECKPOINT_FILES: [&str; 7] = [
    "policy_trunk.bin",
    "policy_head.bin",
    "value_ext_head.bin",
    "value_int_head.bin",
    "rnd_target.bin",
    "rnd_predictor.bin",
    "rnd_normalizer.bin",
];

/// Write every network and the RND normalizer into `dir`.
pub fn save_checkpoint(dir: &Path, net: &PolicyNet, rnd: &RndPair) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let nets = [&net.trunk, &net.policy_head, &net.value_ext_head, &net.value_int_head, &rnd.target, &rnd.predictor];
    for (name, params) in CHECKPOINT_FILES.iter().zip(nets) {
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::file(&path, e))?);
        io::write_mlp(&mut w, params)?;
    }
    let path = dir.join(CHECKPOINT_FILES[6]);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::file(&path, e))?);
    io::write_tensors(&mut w, &rnd.normalizer.to_tensors())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(PolicyNet, RndPair)> {
    let open = |name: &str| {
        let path = dir.join(name);
        File::open(&path).map(BufReader::new).map_err(|e| Error::file(&path, e))
    };
    let mut mlps = Vec::with_capacity(6);
    for name in &CHECKPOINT_FILES[..6] {
        mlps.push(io::read_mlp(&mut open(name)?)?);
    }
    let normalizer = ObsNormalizer::from_tensors(&io::read_tensors(&mut open(CHECKPOINT_FILES[6])?)?)?;
    let mut it = mlps.into_iter();
    let mut next = || it.next().expect("six networks");
    let net = PolicyNet {
        trunk: next(),
        policy_head: next(),
        value_ext_head: next(),
        value_int_head: next(),
    };
    let target = next();
    let predictor = next();
    let feature_length = target.output_len();
    Ok((
        net,
        RndPair {
            target,
            predictor,
            feature_length,
            normalizer,
        },
    ))
}
