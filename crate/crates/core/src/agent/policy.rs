use rand::Rng;

use crate::error::{Error, Result};
use crate::nncore::{
    forward_eval, forward_eval_tape, log_softmax_rows, softmax_rows, Activation, MlpParams, ParamId,
    Parameterized, Tape, Tensor, Var,
};

/// Shared trunk feeding a policy head and two scalar value heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub trunk: MlpParams,
    pub policy_head: MlpParams,
    pub value_ext_head: MlpParams,
    pub value_int_head: MlpParams,
}

/// Evaluation-mode outputs for a batch of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Tensor,
    pub value_ext: Vec<f64>,
    pub value_int: Vec<f64>,
}

/// Outputs recorded on a tape, each `[n, ·]`.
#[derive(Debug, Clone, Copy)]
pub struct TapeOutput {
    pub logits: Var,
    pub value_ext: Var,
    pub value_int: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value_ext: f64,
    pub value_int: f64,
}

impl PolicyNet {
    pub const TRUNK_BASE: u32 = 0;
    pub const POLICY_BASE: u32 = 1_000;
    pub const VALUE_EXT_BASE: u32 = 2_000;
    pub const VALUE_INT_BASE: u32 = 3_000;

    pub fn new(
        input_len: usize,
        action_count: usize,
        hidden: usize,
        hidden_layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden_layers == 0 || action_count == 0 {
            return Err(Error::Config(
                "policy needs at least one hidden layer and one action".into(),
            ));
        }
        let mut sizes = vec![input_len];
        sizes.extend(std::iter::repeat_n(hidden, hidden_layers));
        let trunk = MlpParams::init(&sizes, Activation::Relu, Activation::Relu, 0.0, rng)?;
        let head = |out: usize, scale: f64, rng: &mut _| {
            MlpParams::init(&[hidden, out], Activation::Identity, Activation::Identity, 0.0, rng)
                .map(|m| m.scale_output(scale))
        };
        Ok(Self {
            trunk,
            policy_head: head(action_count, 0.01, rng)?,
            value_ext_head: head(1, 1.0, rng)?,
            value_int_head: head(1, 1.0, rng)?,
        })
    }

    pub fn input_len(&self) -> usize {
        self.trunk.input_len()
    }

    pub fn action_count(&self) -> usize {
        self.policy_head.output_len()
    }

    pub fn forward(&self, obs: &Tensor) -> Result<PolicyOutput> {
        let features = forward_eval(&self.trunk, obs)?;
        let logits = forward_eval(&self.policy_head, &features)?;
        let value_ext = forward_eval(&self.value_ext_head, &features)?.into_data();
        let value_int = forward_eval(&self.value_int_head, &features)?.into_data();
        if !logits.all_finite() || value_ext.iter().chain(&value_int).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("policy network output is not finite".into()));
        }
        Ok(PolicyOutput {
            logits,
            value_ext,
            value_int,
        })
    }

    pub fn forward_tape(&self, tape: &mut Tape, obs: Var) -> Result<TapeOutput> {
        let features = forward_eval_tape(tape, &self.trunk, Self::TRUNK_BASE, obs)?;
        let logits =
            forward_eval_tape(tape, &self.policy_head, Self::POLICY_BASE, features)?;
        let value_ext = forward_eval_tape(tape, &self.value_ext_head, Self::VALUE_EXT_BASE, features)?;
        let value_int = forward_eval_tape(tape, &self.value_int_head, Self::VALUE_INT_BASE, features)?;
        Ok(TapeOutput {
            logits,
            value_ext,
            value_int,
        })
    }

    /// Value estimates for a batch of observations.
    pub fn values(&self, obs: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let features = forward_eval(&self.trunk, obs)?;
        let value_ext = forward_eval(&self.value_ext_head, &features)?.into_data();
        let value_int = forward_eval(&self.value_int_head, &features)?.into_data();
        Ok((value_ext, value_int))
    }

    /// Sample an action from `softmax(logits)` for one observation.
    pub fn act(&self, obs: &[f64], rng: &mut impl Rng) -> Result<ActOutput> {
        let x = Tensor::new(vec![1, obs.len()], obs.to_vec())?;
        let out = self.forward(&x)?;
        let probs = softmax_rows(&out.logits);
        let log_probs = log_softmax_rows(&out.logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = probs.len() - 1;
        for (a, &p) in probs.data().iter().enumerate() {
            acc += p;
            if u < acc {
                action = a;
                break;
            }
        }
        Ok(ActOutput {
            action,
            log_prob: log_probs.data()[action],
            value_ext: out.value_ext[0],
            value_int: out.value_int[0],
        })
    }
}

impl Parameterized for PolicyNet {
    fn visit_params(&self, f: &mut dyn FnMut(ParamId, &Tensor)) {
        self.trunk.visit(Self::TRUNK_BASE, f);
        self.policy_head.visit(Self::POLICY_BASE, f);
        self.value_ext_head.visit(Self::VALUE_EXT_BASE, f);
        self.value_int_head.visit(Self::VALUE_INT_BASE, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamId, &mut Tensor)) {
        self.trunk.visit_mut(Self::TRUNK_BASE, f);
        self.policy_head.visit_mut(Self::POLICY_BASE, f);
        self.value_ext_head.visit_mut(Self::VALUE_EXT_BASE, f);
        self.value_int_head.visit_mut(Self::VALUE_INT_BASE, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net_with_logits(logits: &[f64]) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PolicyNet::new(3, logits.len(), 4, 1, &mut rng).unwrap();
        let head = &mut net.policy_head.layers[0];
        head.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        head.bias.data_mut().copy_from_slice(logits);
        net
    }

    #[test]
    fn equal_logits_sample_uniformly() {
        let net = net_with_logits(&[0.3; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[net.act(&[0.1, 0.2, 0.3], &mut rng).unwrap().action] += 1;
        }
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn saturated_logit_always_wins() {
        let net = net_with_logits(&[0.0, 50.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert_eq!(net.act(&[1.0, 0.0, 0.0], &mut rng).unwrap().action, 1);
        }
    }

    #[test]
    fn log_prob_matches_log_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::new(5, 3, 8, 2, &mut rng).unwrap();
        let obs = [0.2, 0.0, 1.0, 0.5, 0.1];
        for _ in 0..50 {
            let out = net.act(&obs, &mut rng).unwrap();
            let logits = net
                .forward(&Tensor::new(vec![1, 5], obs.to_vec()).unwrap())
                .unwrap()
                .logits;
            let max = logits.data().iter().cloned().fold(f64::MIN, f64::max);
            let lse = max + logits.data().iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            assert!((out.log_prob - (logits.data()[out.action] - lse)).abs() < 1e-12);
            assert!(out.log_prob <= 0.0);
        }
    }
}
