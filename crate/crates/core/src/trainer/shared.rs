use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use crate::agent::PolicyNet;
use crate::error::{Error, Result};
use crate::nncore::{AdamConfig, Gradients, ParamId, Parameterized, Tensor};
use crate::rnd::{ObsNormalizer, RndPair};

use super::update::Model;

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug)]
struct Slot {
    shape: Vec<usize>,
    param: Vec<AtomicU64>,
    m: Vec<AtomicU64>,
    v: Vec<AtomicU64>,
}

fn atomics(values: &[f64]) -> Vec<AtomicU64> {
    values.iter().map(|v| AtomicU64::new(v.to_bits())).collect()
}

fn load(a: &AtomicU64) -> f64 {
    f64::from_bits(a.load(Ordering::Relaxed))
}

fn store(a: &AtomicU64, v: f64) {
    a.store(v.to_bits(), Ordering::Relaxed)
}

/// Parameters and Adam moments of the policy network and RND predictor,
/// held as per-scalar atomics. Readers may see a mix of old and new
/// scalars but never a torn one; writers apply Adam without a global lock.
#[derive(Debug)]
pub struct SharedModel {
    slots: BTreeMap<ParamId, Slot>,
    step: AtomicU64,
    adam: AdamConfig,
    normalizer: Mutex<ObsNormalizer>,
}

impl SharedModel {
    pub fn new(net: &PolicyNet, rnd: &RndPair, adam: AdamConfig) -> Self {
        let mut slots = BTreeMap::new();
        let mut add = |id: ParamId, t: &Tensor| {
            let zeros = vec![0.0; t.len()];
            slots.insert(
                id,
                Slot {
                    shape: t.shape().to_vec(),
                    param: atomics(t.data()),
                    m: atomics(&zeros),
                    v: atomics(&zeros),
                },
            );
        };
        net.visit_params(&mut add);
        rnd.visit_params(&mut add);
        Self {
            slots,
            step: AtomicU64::new(0),
            adam,
            normalizer: Mutex::new(rnd.normalizer.clone()),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step.load(Ordering::SeqCst)
    }

    /// Copy the current shared parameters and normalizer into local copies.
    pub fn snapshot_into(&self, net: &mut PolicyNet, rnd: &mut RndPair) {
        let mut model = Model { net, rnd };
        model.visit_params_mut(&mut |id, t| {
            let slot = &self.slots[&id];
            for (dst, src) in t.data_mut().iter_mut().zip(&slot.param) {
                *dst = load(src);
            }
        });
        rnd.normalizer = lock(&self.normalizer).clone();
    }

    /// Feed observations to the shared normalizer, in order.
    pub fn observe(&self, observations: &[&[f64]]) {
        let mut n = lock(&self.normalizer);
        for o in observations {
            n.update(o);
        }
    }

    pub fn normalizer(&self) -> ObsNormalizer {
        lock(&self.normalizer).clone()
    }

    pub fn set_normalizer(&self, normalizer: ObsNormalizer) {
        *lock(&self.normalizer) = normalizer;
    }

    /// One Hogwild Adam step. Parameters without a gradient keep their
    /// values and moments.
    pub fn apply(&self, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            match self.slots.get(&id) {
                Some(slot) if slot.shape == g.shape() => {}
                _ => return Err(Error::Usage(format!("gradient for unknown or misshaped {id:?}"))),
            }
        }
        let t = self.step.fetch_add(1, Ordering::SeqCst) + 1;
        for (id, g) in grads.iter() {
            let slot = &self.slots[&id];
            for (i, &gi) in g.data().iter().enumerate() {
                let (mut p, mut m, mut v) = (load(&slot.param[i]), load(&slot.m[i]), load(&slot.v[i]));
                self.adam.update_scalar(t, &mut p, gi, &mut m, &mut v);
                store(&slot.m[i], m);
                store(&slot.v[i], v);
                store(&slot.param[i], p);
            }
        }
        Ok(())
    }
}

/// Environment step budget shared by all workers.
#[derive(Debug)]
pub struct StepBudget {
    remaining: AtomicU64,
    used: AtomicU64,
}

impl StepBudget {
    pub fn new(total: u64) -> Self {
        Self {
            remaining: AtomicU64::new(total),
            used: AtomicU64::new(0),
        }
    }

    /// Claim up to `max` steps; returns how many were granted.
    pub fn reserve(&self, max: u64) -> u64 {
        let prev = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| Some(r - r.min(max)))
            .expect("closure always returns Some");
        prev.min(max)
    }

    /// Return claimed steps that were not used.
    pub fn refund(&self, n: u64) {
        self.remaining.fetch_add(n, Ordering::SeqCst);
    }

    pub fn consume(&self, n: u64) -> u64 {
        self.used.fetch_add(n, Ordering::SeqCst) + n
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn exhausted(&self) -> bool {
        self.remaining.load(Ordering::SeqCst) == 0
    }
}
