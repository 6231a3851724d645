use std::fmt::Write as _;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::Rng;

use super::batch::{classify, Batch, ImportanceClass, NoveltyThreshold};
use super::buffer::{ClassBuffer, EvictionReport};
use super::PoerConfig;

/// What happened to one batch at episode end.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreReport {
    pub batch_id: u64,
    pub class: Option<ImportanceClass>,
    pub eviction: Option<EvictionReport>,
}

/// A replay sample handed to a worker; the batch is an immutable snapshot.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub class: ImportanceClass,
    pub slot: usize,
    pub batch: Arc<Batch>,
}

/// The three class buffers shared by all workers. Every buffer operation
/// runs under that buffer's own lock.
#[derive(Debug)]
pub struct SharedReplay {
    buffers: [Mutex<ClassBuffer>; 3],
    novelty: Mutex<NoveltyThreshold>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl SharedReplay {
    pub fn new(config: &PoerConfig) -> Self {
        let make = |c| Mutex::new(ClassBuffer::new(c, config.buffer_capacity, config.drop_probability));
        Self {
            buffers: ImportanceClass::ALL.map(make),
            novelty: Mutex::new(NoveltyThreshold::new(config.novelty_decay)),
        }
    }

    pub fn lens(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| lock(&self.buffers[i]).len())
    }

    /// Snapshot of one buffer.
    pub fn buffer(&self, class: ImportanceClass) -> ClassBuffer {
        lock(&self.buffers[class.index()]).clone()
    }

    /// Classify the batches of a finished episode (paired with their
    /// "a later batch was rewarded" flags) and insert the worthy ones.
    pub fn store_episode(&self, batches: Vec<(Batch, bool)>, rng: &mut impl Rng) -> Vec<StoreReport> {
        let mut reports = Vec::with_capacity(batches.len());
        for (batch, later) in batches {
            let threshold = lock(&self.novelty).observe(batch.intrinsic_total());
            let class = classify(&batch, later, threshold);
            let id = batch.id;
            let eviction = class.map(|c| lock(&self.buffers[c.index()]).insert(batch, rng));
            reports.push(StoreReport {
                batch_id: id,
                class,
                eviction,
            });
        }
        reports
    }

    /// Uniform choice among non-empty buffers, then proportional sampling
    /// inside it. Buffers never shrink, so a buffer seen non-empty stays so.
    pub fn sample_for_replay(&self, rng: &mut impl Rng) -> Option<Sampled> {
        let nonempty: Vec<usize> = (0..3).filter(|&i| !lock(&self.buffers[i]).is_empty()).collect();
        if nonempty.is_empty() {
            return None;
        }
        let i = nonempty[rng.random_range(0..nonempty.len())];
        let buf = lock(&self.buffers[i]);
        buf.sample(rng).map(|(slot, batch)| Sampled {
            class: buf.class(),
            slot,
            batch,
        })
    }

    /// Store a refreshed copy of a replayed batch if it is still present.
    pub fn refresh(&self, class: ImportanceClass, updated: Batch) -> bool {
        let id = updated.id;
        lock(&self.buffers[class.index()]).replace(id, updated)
    }

    /// Text table of every buffer's contents.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for class in ImportanceClass::ALL {
            let buf = lock(&self.buffers[class.index()]);
            let _ = writeln!(
                out,
                "[{}] {}/{} cursor={}",
                class.name(),
                buf.len(),
                buf.capacity(),
                buf.cursor()
            );
            let _ = writeln!(out, "{:>6} {:>10} {:>14}  class", "slot", "episode", "priority");
            for (slot, b) in buf.slots().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{slot:>6} {:>10} {:>14.6}  {}",
                    b.episode_id,
                    b.priority,
                    class.name()
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poer::batch::tests::batch_with;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn episode_storage_and_dump() {
        let replay = SharedReplay::new(&PoerConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut first = batch_with(&[0.0], &[0.2]);
        first.id = 1;
        let mut second = batch_with(&[1.0], &[0.1]);
        second.id = 2;
        let reports = replay.store_episode(vec![(first, true), (second, false)], &mut rng);
        assert_eq!(reports[0].class, Some(ImportanceClass::LeadsToReward));
        assert_eq!(reports[1].class, Some(ImportanceClass::ContainsReward));
        assert_eq!(replay.lens(), [1, 1, 0]);
        let dump = replay.dump();
        assert!(dump.contains("[contains_reward] 1/128"));
        assert!(dump.contains("[may_lead_to_unseen] 0/128"));
        let s = replay.sample_for_replay(&mut rng).unwrap();
        let mut updated = (*s.batch).clone();
        updated.priority = 0.0;
        assert!(replay.refresh(s.class, updated));
        assert_eq!(replay.buffer(s.class).priorities(), vec![0.0]);
    }
}
