use std::sync::Arc;

use rand::Rng;

use super::batch::{Batch, ImportanceClass};

/// Which rule chose the evicted slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropRule {
    LowestPriority,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evicted {
    pub slot: usize,
    pub batch_id: u64,
    pub priority: f64,
    pub rule: DropRule,
}

/// Outcome of [`ClassBuffer::insert`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionReport {
    /// Slot now holding the new batch.
    pub slot: usize,
    pub evicted: Option<Evicted>,
}

/// Fixed-capacity priority buffer for one importance class.
///
/// Once full, each insertion evicts the lowest-priority slot with
/// probability `drop_probability`, and otherwise the slot at the circular
/// cursor (which then advances).
#[derive(Debug, Clone)]
pub struct ClassBuffer {
    class: ImportanceClass,
    capacity: usize,
    drop_probability: f64,
    slots: Vec<Arc<Batch>>,
    cursor: u64,
    inserted: u64,
}

impl ClassBuffer {
    pub fn new(class: ImportanceClass, capacity: usize, drop_probability: f64) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            class,
            capacity,
            drop_probability: drop_probability.clamp(0.0, 1.0),
            slots: Vec::with_capacity(capacity),
            cursor: 0,
            inserted: 0,
        }
    }

    pub fn class(&self) -> ImportanceClass {
        self.class
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn set_cursor(&mut self, cursor: u64) {
        self.cursor = cursor;
    }

    pub fn slots(&self) -> &[Arc<Batch>] {
        &self.slots
    }

    pub fn priorities(&self) -> Vec<f64> {
        self.slots.iter().map(|b| b.priority).collect()
    }

    pub fn insert(&mut self, mut batch: Batch, rng: &mut impl Rng) -> EvictionReport {
        debug_assert!(batch.priority.is_finite() && batch.priority >= 0.0);
        batch.importance_class = Some(self.class);
        batch.insertion_index = Some(self.inserted);
        self.inserted += 1;
        let batch = Arc::new(batch);
        if !self.is_full() {
            self.slots.push(batch);
            return EvictionReport {
                slot: self.slots.len() - 1,
                evicted: None,
            };
        }
        let p_d: f64 = rng.random();
        let (slot, rule) = if p_d < self.drop_probability {
            (self.lowest_priority_slot(), DropRule::LowestPriority)
        } else {
            let slot = (self.cursor % self.capacity as u64) as usize;
            self.cursor += 1;
            (slot, DropRule::RoundRobin)
        };
        let old = std::mem::replace(&mut self.slots[slot], batch);
        EvictionReport {
            slot,
            evicted: Some(Evicted {
                slot,
                batch_id: old.id,
                priority: old.priority,
                rule,
            }),
        }
    }

    fn lowest_priority_slot(&self) -> usize {
        let mut best = 0;
        for (i, b) in self.slots.iter().enumerate() {
            if b.priority < self.slots[best].priority {
                best = i;
            }
        }
        best
    }

    /// Proportional sampling: draw `z` uniformly in `[0, Σ priorities)` and
    /// take the first slot whose inclusive prefix sum exceeds `z`. A buffer
    /// whose priorities are all zero is sampled uniformly.
    pub fn sample(&self, rng: &mut impl Rng) -> Option<(usize, Arc<Batch>)> {
        if self.slots.is_empty() {
            return None;
        }
        let total: f64 = self.slots.iter().map(|b| b.priority).sum();
        if !(total > 0.0) {
            let slot = rng.random_range(0..self.slots.len());
            return Some((slot, Arc::clone(&self.slots[slot])));
        }
        let z = rng.random::<f64>() * total;
        let mut prefix = 0.0;
        let mut last_positive = 0;
        for (i, b) in self.slots.iter().enumerate() {
            if b.priority > 0.0 {
                last_positive = i;
            }
            prefix += b.priority;
            if prefix > z {
                return Some((i, Arc::clone(b)));
            }
        }
        // z rounded up to the total
        Some((last_positive, Arc::clone(&self.slots[last_positive])))
    }

    /// Replace the stored copy of batch `id` (if still present) with
    /// `updated`, keeping its slot, class and insertion index.
    pub fn replace(&mut self, id: u64, mut updated: Batch) -> bool {
        let Some(slot) = self.slots.iter().position(|b| b.id == id) else {
            return false;
        };
        updated.importance_class = self.slots[slot].importance_class;
        updated.insertion_index = self.slots[slot].insertion_index;
        self.slots[slot] = Arc::new(updated);
        true
    }
}

/// Choose uniformly among the non-empty buffers, then sample within the
/// chosen one. `None` when every buffer is empty.
pub fn sample_for_replay(
    buffers: &[ClassBuffer],
    rng: &mut impl Rng,
) -> Option<(ImportanceClass, usize, Arc<Batch>)> {
    let candidates: Vec<&ClassBuffer> = buffers.iter().filter(|b| !b.is_empty()).collect();
    if candidates.is_empty() {
        return None;
    }
    let chosen = candidates[rng.random_range(0..candidates.len())];
    chosen
        .sample(rng)
        .map(|(slot, batch)| (chosen.class(), slot, batch))
}
