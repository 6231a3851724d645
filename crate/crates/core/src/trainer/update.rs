use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{ppo_actor_terms, pvo_critic_terms, LossConfig, PolicyNet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nncore::{backward, Gradients, ParamId, Parameterized, Tape, Tensor};
use crate::poer::Batch;
use crate::rnd::RndPair;

/// One entry of a super-batch.
#[derive(Debug, Clone)]
pub struct SuperBatchItem {
    pub batch: Batch,
    pub replayed: bool,
}

/// Mean loss components of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub actor: f64,
    pub critic_ext: f64,
    pub critic_int: f64,
    pub entropy: f64,
    /// Absent when the super-batch held no fresh batch.
    pub rnd: Option<f64>,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.actor, self.critic_ext, self.critic_int, self.entropy]
            .iter()
            .chain(self.rnd.as_ref())
            .all(|v| v.is_finite())
    }
}

/// Policy network and RND predictor viewed as one parameter set.
pub struct Model<'a> {
    pub net: &'a mut PolicyNet,
    pub rnd: &'a mut RndPair,
}

impl Parameterized for Model<'_> {
    fn visit_params(&self, f: &mut dyn FnMut(ParamId, &Tensor)) {
        self.net.visit_params(f);
        self.rnd.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamId, &mut Tensor)) {
        self.net.visit_params_mut(f);
        self.rnd.visit_params_mut(f);
    }
}

struct Partial {
    grads: Gradients,
    actor: f64,
    critic_ext: f64,
    critic_int: f64,
    entropy: f64,
    rnd: f64,
}

fn batch_gradients(
    item: &SuperBatchItem,
    dropout_seed: u64,
    net: &PolicyNet,
    rnd: &RndPair,
    config: &LossConfig,
    total_steps: f64,
    fresh_steps: f64,
) -> Result<Partial> {
    let b = &item.batch;
    let n = b.len();
    let obs: Vec<&[f64]> = b.steps.iter().map(|s| s.obs.as_slice()).collect();
    let x = Tensor::from_rows(&obs)?;
    let actions: Vec<usize> = b.steps.iter().map(|s| s.action).collect();
    let lp_old: Vec<f64> = b.steps.iter().map(|s| s.log_prob_old).collect();
    let v_ext: Vec<f64> = b.steps.iter().map(|s| s.value_ext).collect();
    let v_int: Vec<f64> = b.steps.iter().map(|s| s.value_int).collect();
    let adv = b.mixed_advantages(config)?;

    let mut tape = Tape::new();
    let input = tape.constant(x);
    let out = net.forward_tape(&mut tape, input)?;
    let log_probs = tape.log_softmax(out.logits);
    let probs = tape.softmax(out.logits);
    let lp_new = tape.pick(log_probs, &actions)?;
    let plogp = tape.mul(probs, log_probs)?;
    let neg_entropy = tape.sum_rows(plogp);
    let entropy = tape.scale(neg_entropy, -1.0);
    let actor = ppo_actor_terms(&mut tape, lp_new, &lp_old, &adv, entropy, config)?;
    let critic_ext = pvo_critic_terms(&mut tape, &b.returns_ext, out.value_ext, &v_ext, config)?;
    let critic_int = pvo_critic_terms(&mut tape, &b.returns_int, out.value_int, &v_int, config)?;

    let actor_sum = tape.sum(actor);
    let ext_sum = tape.sum(critic_ext);
    let int_sum = tape.sum(critic_int);
    let ent_sum = tape.sum(entropy);
    let ac = tape.add(actor_sum, ext_sum)?;
    let acc = tape.add(ac, int_sum)?;
    let mut loss = tape.scale(acc, 1.0 / total_steps);

    let mut rnd_sum = 0.0;
    if !item.replayed && n > 0 {
        let next: Vec<&[f64]> = (0..n).map(|t| b.next_obs(t)).collect();
        let normalized = rnd.normalized_matrix(&next)?;
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let terms = rnd.predictor_loss_terms(&mut tape, &normalized, &mut rng)?;
        let s = tape.sum(terms);
        rnd_sum = tape.value(s).item()?;
        let scaled = tape.scale(s, 1.0 / fresh_steps);
        loss = tape.add(loss, scaled)?;
    }

    let grads = backward(&tape, loss)?;
    Ok(Partial {
        grads,
        actor: tape.value(actor_sum).item()?,
        critic_ext: tape.value(ext_sum).item()?,
        critic_int: tape.value(int_sum).item()?,
        entropy: tape.value(ent_sum).item()?,
        rnd: rnd_sum,
    })
}

/// Gradient of the joint loss of a super-batch: actor and both critics
/// averaged over every step, the RND predictor loss averaged over the steps
/// of fresh batches only. `dropout_seeds[i]` drives the predictor dropout of
/// item `i`. Per-batch gradients are summed in item order, so the result
/// does not depend on `exec`.
pub fn super_batch_gradients(
    items: &[SuperBatchItem],
    dropout_seeds: &[u64],
    net: &PolicyNet,
    rnd: &RndPair,
    config: &LossConfig,
    exec: Exec,
) -> Result<(Gradients, LossReport)> {
    if dropout_seeds.len() != items.len() {
        return Err(Error::Usage("one dropout seed per super-batch item".into()));
    }
    let total: usize = items.iter().map(|i| i.batch.len()).sum();
    let fresh: usize = items.iter().filter(|i| !i.replayed).map(|i| i.batch.len()).sum();
    if total == 0 {
        return Err(Error::Usage("super-batch holds no steps".into()));
    }
    let parts = exec.map(items, |i, item| {
        batch_gradients(
            item,
            dropout_seeds[i],
            net,
            rnd,
            config,
            total as f64,
            fresh.max(1) as f64,
        )
    });
    let mut grads = Gradients::new();
    let mut report = LossReport::default();
    let mut rnd_total = 0.0;
    for part in parts {
        let part = part?;
        grads.accumulate(&part.grads);
        report.actor += part.actor;
        report.critic_ext += part.critic_ext;
        report.critic_int += part.critic_int;
        report.entropy += part.entropy;
        rnd_total += part.rnd;
    }
    let t = total as f64;
    report.actor /= t;
    report.critic_ext /= t;
    report.critic_int /= t;
    report.entropy /= t;
    report.rnd = (fresh > 0).then(|| rnd_total / fresh as f64);
    if fresh == 0 {
        // the predictor is frozen while only replayed data is trained on
        grads.retain(|id| id.0 < crate::rnd::PREDICTOR_BASE);
    }
    if !report.all_finite() || !grads.all_finite() {
        return Err(Error::Numerical(format!("non-finite loss or gradient: {report:?}")));
    }
    Ok((grads, report))
}
