//! Random network distillation: a frozen random target network, a trained
//! predictor, and the prediction error used as an intrinsic reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{
    backward, forward_eval, forward_mlp_tape, Activation, AdamState, MlpParams, ParamId,
    Parameterized, Tape, Tensor, Var,
};

/// Parameter-identity base of the predictor network.
pub const PREDICTOR_BASE: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RndConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub feature_length: usize,
    pub dropout_rate: f64,
    pub obs_clip: f64,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            hidden_layers: 2,
            feature_length: 32,
            dropout_rate: 0.5,
            obs_clip: 5.0,
        }
    }
}

/// Whether the trainer is consuming fresh experience or replaying stored
/// batches. The predictor may only learn during [`Phase::Rollout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Rollout,
    Replay,
}

/// Running per-entry mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNormalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    clip: f64,
}

impl ObsNormalizer {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn new(len: usize, clip: f64) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
            clip,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|m2| (m2 / self.count as f64).sqrt())
            .collect()
    }

    /// Welford update with one observation.
    pub fn update(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(obs) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    /// `(obs − mean) / max(std, 1e-8)` clipped to `±clip`.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        obs.iter()
            .zip(&self.mean)
            .zip(&self.m2)
            .map(|((&x, &mean), &m2)| {
                let std = (m2 / n).sqrt().max(Self::STD_FLOOR);
                ((x - mean) / std).clamp(-self.clip, self.clip)
            })
            .collect()
    }

    pub(crate) fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::new(vec![2], vec![self.count as f64, self.clip]).expect("shape"),
            Tensor::new(vec![self.mean.len()], self.mean.clone()).expect("shape"),
            Tensor::new(vec![self.m2.len()], self.m2.clone()).expect("shape"),
        ]
    }

    pub(crate) fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        match tensors {
            [head, mean, m2] if head.len() == 2 && mean.len() == m2.len() => Ok(Self {
                count: head.data()[0] as u64,
                clip: head.data()[1],
                mean: mean.data().to_vec(),
                m2: m2.data().to_vec(),
            }),
            _ => Err(Error::Usage("malformed normalizer record".into())),
        }
    }
}

/// Target/predictor pair with the observation normalizer feeding both.
#[derive(Debug, Clone)]
pub struct RndPair {
    pub target: MlpParams,
    pub predictor: MlpParams,
    pub feature_length: usize,
    pub normalizer: ObsNormalizer,
}

impl RndPair {
    pub fn new(config: &RndConfig, input_len: usize, rng: &mut impl Rng) -> Result<Self> {
        if config.hidden == 0 || config.feature_length == 0 || input_len == 0 {
            return Err(Error::Config("RND sizes must be positive".into()));
        }
        let mut sizes = vec![input_len];
        sizes.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
        sizes.push(config.feature_length);
        let target = MlpParams::init(&sizes, Activation::Relu, Activation::Identity, 0.0, rng)?;
        let predictor = MlpParams::init(
            &sizes,
            Activation::Relu,
            Activation::Identity,
            config.dropout_rate,
            rng,
        )?;
        Ok(Self {
            target,
            predictor,
            feature_length: config.feature_length,
            normalizer: ObsNormalizer::new(input_len, config.obs_clip),
        })
    }

    pub fn input_len(&self) -> usize {
        self.target.input_len()
    }

    pub fn target_checksum(&self) -> u64 {
        self.target.checksum()
    }

    pub fn predictor_checksum(&self) -> u64 {
        self.checksum()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.input_len() {
            return Err(Error::Config(format!(
                "observation length {len} does not match RND input {}",
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Per-row mean squared error between predictor and target on
    /// already-normalized inputs. The predictor runs without dropout.
    pub fn prediction_errors(&self, normalized: &Tensor) -> Result<Vec<f64>> {
        self.check_len(normalized.cols())?;
        let pred = forward_eval(&self.predictor, normalized)?;
        let targ = forward_eval(&self.target, normalized)?;
        let f = self.feature_length as f64;
        let errors: Vec<f64> = (0..pred.rows())
            .map(|r| {
                pred.row(r)
                    .iter()
                    .zip(targ.row(r))
                    .map(|(p, t)| (p - t) * (p - t))
                    .sum::<f64>()
                    / f
            })
            .collect();
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numerical("RND produced a non-finite output".into()));
        }
        Ok(errors)
    }

    /// Intrinsic reward of one observation, normalized with the current
    /// statistics (which are not updated). Never scaled.
    pub fn intrinsic_reward(&self, obs: &[f64]) -> Result<f64> {
        self.check_len(obs.len())?;
        let x = Tensor::new(vec![1, obs.len()], self.normalizer.normalize(obs))?;
        Ok(self.prediction_errors(&x)?[0])
    }

    /// Intrinsic rewards of many observations.
    pub fn intrinsic_rewards(&self, observations: &[&[f64]]) -> Result<Vec<f64>> {
        if observations.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.normalized_matrix(observations)?;
        self.prediction_errors(&x)
    }

    pub fn normalized_matrix(&self, observations: &[&[f64]]) -> Result<Tensor> {
        let d = self.input_len();
        let mut data = Vec::with_capacity(observations.len() * d);
        for obs in observations {
            self.check_len(obs.len())?;
            data.extend(self.normalizer.normalize(obs));
        }
        Tensor::new(vec![observations.len(), d], data)
    }

    /// Record the predictor loss on a tape: per-row `(1/F)·Σ(pred − target)²`
    /// as an `[n, 1]` column, with the predictor in training mode.
    pub fn predictor_loss_terms(
        &self,
        tape: &mut Tape,
        normalized: &Tensor,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let targ = forward_eval(&self.target, normalized)?;
        let x = tape.constant(normalized.clone());
        let pred = forward_mlp_tape(tape, &self.predictor, PREDICTOR_BASE, x, true, rng)?;
        let targ = tape.constant(targ);
        let diff = tape.sub(pred, targ)?;
        let sq = tape.square(diff);
        let rows = tape.sum_rows(sq);
        Ok(tape.scale(rows, 1.0 / self.feature_length as f64))
    }

    /// One gradient step of the predictor on the mean prediction error of
    /// `observations`. Returns `None` for an empty batch. The target and
    /// the normalizer are not modified.
    pub fn train_predictor(
        &mut self,
        observations: &[&[f64]],
        optimizer: &mut AdamState,
        phase: Phase,
        rng: &mut impl Rng,
    ) -> Result<Option<f64>> {
        if phase == Phase::Replay {
            return Err(Error::Contract(
                "the RND predictor cannot be trained during replay".into(),
            ));
        }
        if observations.is_empty() {
            return Ok(None);
        }
        let x = self.normalized_matrix(observations)?;
        let mut tape = Tape::new();
        let terms = self.predictor_loss_terms(&mut tape, &x, rng)?;
        let total = tape.sum(terms);
        let loss = tape.scale(total, 1.0 / observations.len() as f64);
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numerical("RND loss is not finite".into()));
        }
        let grads = backward(&tape, loss)?;
        optimizer.step(self, &grads)?;
        Ok(Some(value))
    }
}

impl Parameterized for RndPair {
    fn visit_params(&self, f: &mut dyn FnMut(ParamId, &Tensor)) {
        self.predictor.visit(PREDICTOR_BASE, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamId, &mut Tensor)) {
        self.predictor.visit_mut(PREDICTOR_BASE, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(input: usize, seed: u64) -> RndPair {
        let cfg = RndConfig {
            hidden: 16,
            feature_length: 8,
            ..RndConfig::default()
        };
        RndPair::new(&cfg, input, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn copied_predictor_gives_zero_reward() {
        let mut p = pair(6, 1);
        p.predictor.layers = p.target.layers.clone();
        let obs = [0.0, 1.0, 0.0, 0.5, 0.2, 0.9];
        p.normalizer.update(&obs);
        p.normalizer.update(&[0.3; 6]);
        assert_eq!(p.intrinsic_reward(&obs).unwrap(), 0.0);
    }

    fn plain_forward(net: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &net.layers {
            let (k, m) = (layer.inputs(), layer.outputs());
            let mut out = vec![0.0; m];
            for j in 0..m {
                let mut s = layer.bias.data()[j];
                for i in 0..k {
                    s += h[i] * layer.weight.data()[i * m + j];
                }
                out[j] = match layer.activation {
                    Activation::Relu => s.max(0.0),
                    _ => s,
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn reward_matches_plain_loop_oracle() {
        let mut p = pair(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let o: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            p.normalizer.update(&o);
        }
        let obs = [0.1, 0.9, 0.4, 0.0, 1.0];
        let x = p.normalizer.normalize(&obs);
        let pred = plain_forward(&p.predictor, &x);
        let targ = plain_forward(&p.target, &x);
        let expected: f64 =
            pred.iter().zip(&targ).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 8.0;
        let got = p.intrinsic_reward(&obs).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
        assert!(got >= 0.0);
    }

    #[test]
    fn normalizer_floor_and_clip() {
        let mut n = ObsNormalizer::new(2, 5.0);
        for _ in 0..10 {
            n.update(&[0.25, 0.75]);
        }
        assert_eq!(n.normalize(&[0.25, 0.75]), vec![0.0, 0.0]);

        let mut n = ObsNormalizer::new(1, 5.0);
        for v in [0.0, 1.0, 0.0, 1.0] {
            n.update(&[v]);
        }
        let (mean, std) = (n.mean()[0], n.std()[0]);
        assert_eq!(n.normalize(&[mean + 10.0 * std]), vec![5.0]);
        assert_eq!(n.normalize(&[mean - 10.0 * std]), vec![-5.0]);
    }

    #[test]
    fn running_stats_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 10.0 - 2.0).collect())
            .collect();
        let mut n = ObsNormalizer::new(3, 5.0);
        data.iter().for_each(|o| n.update(o));
        for j in 0..3 {
            let mean = data.iter().map(|o| o[j]).sum::<f64>() / 500.0;
            let var = data.iter().map(|o| (o[j] - mean).powi(2)).sum::<f64>() / 500.0;
            assert!((n.mean()[j] - mean).abs() < 1e-9);
            assert!((n.std()[j] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn training_lowers_reward_and_keeps_target_frozen() {
        let mut p = RndPair::new(&RndConfig::default(), 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let obs = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let other = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        p.normalizer.update(&obs);
        p.normalizer.update(&other);
        let target_sum = p.target_checksum();
        let start = p.intrinsic_reward(&obs).unwrap();
        let mut opt = AdamState::new(AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut losses = vec![start];
        for _ in 0..500 {
            p.train_predictor(&[&obs], &mut opt, Phase::Rollout, &mut rng)
                .unwrap()
                .unwrap();
            losses.push(p.intrinsic_reward(&obs).unwrap());
        }
        assert!(p.intrinsic_reward(&obs).unwrap() < start);
        assert_eq!(p.target_checksum(), target_sum);
        let rises = losses[..=100].windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 5, "{rises} non-monotone steps in the first 100");
    }

    #[test]
    fn empty_batch_is_noop_and_replay_phase_is_rejected() {
        let mut p = pair(4, 6);
        let before = p.predictor_checksum();
        let mut opt = AdamState::new(AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.train_predictor(&[], &mut opt, Phase::Rollout, &mut rng).unwrap(), None);
        let obs = [0.0; 4];
        assert!(matches!(
            p.train_predictor(&[&obs], &mut opt, Phase::Replay, &mut rng),
            Err(Error::Contract(_))
        ));
        assert_eq!(p.predictor_checksum(), before);
    }
}
