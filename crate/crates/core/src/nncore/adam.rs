use std::collections::{BTreeMap, BTreeSet};

use super::mlp::Parameterized;
use super::tape::{Gradients, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Update one scalar at step `t` (1-based). Shared by [`AdamState`] and
    /// the lock-free parameter store so both follow identical arithmetic.
    #[inline]
    pub fn update_scalar(&self, t: u64, param: &mut f64, grad: f64, m: &mut f64, v: &mut f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
        *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
        let m_hat = *m / (1.0 - self.beta1.powf(t as f64));
        let v_hat = *v / (1.0 - self.beta2.powf(t as f64));
        *param -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
    }
}

/// Adam moments for a set of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update. Parameters without a gradient entry are left
    /// untouched, including their moments.
    pub fn step(&mut self, params: &mut dyn Parameterized, grads: &Gradients) -> Result<()> {
        let mut shapes = BTreeMap::new();
        params.visit_params(&mut |id, t| {
            shapes.insert(id, t.shape().to_vec());
        });
        let mut seen = BTreeSet::new();
        for (id, g) in grads.iter() {
            match shapes.get(&id) {
                None => return Err(Error::Usage(format!("gradient for unknown parameter {id:?}"))),
                Some(s) if s.as_slice() != g.shape() => {
                    return Err(Error::Usage(format!(
                        "gradient shape {:?} does not match parameter {id:?} shape {s:?}",
                        g.shape()
                    )))
                }
                Some(_) => {
                    seen.insert(id);
                }
            }
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let moments = &mut self.moments;
        params.visit_params_mut(&mut |id, p| {
            let Some(g) = grads.get(id) else { return };
            let (m, v) = moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                cfg.update_scalar(t, p, g, m, v);
            }
        });
        Ok(())
    }
}
