use super::LossConfig;
use crate::error::{Error, Result};
use crate::nncore::{Tape, Tensor, Var};

/// `−Σ p·ln p`, with `0·ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Per-step PPO actor loss, an `[n, 1]` column:
/// `−(min(r·A, clip(r, 1−ε, 1+ε)·A) − β·S)` with `r = exp(lp_new − lp_old)`.
pub fn ppo_actor_terms(
    tape: &mut Tape,
    log_prob_new: Var,
    log_prob_old: &[f64],
    advantage: &[f64],
    entropy: Var,
    config: &LossConfig,
) -> Result<Var> {
    let n = tape.value(log_prob_new).len();
    if log_prob_old.len() != n || advantage.len() != n || tape.value(entropy).len() != n {
        return Err(Error::Usage("actor loss inputs differ in length".into()));
    }
    let old = tape.constant(Tensor::column(log_prob_old));
    let diff = tape.sub(log_prob_new, old)?;
    let ratio = tape.exp(diff);
    if !tape.value(ratio).all_finite() {
        return Err(Error::Numerical("probability ratio is not finite".into()));
    }
    let eps = config.clip_epsilon;
    let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let adv = Tensor::column(advantage);
    let surr = tape.mul_const(ratio, adv.clone())?;
    let surr_clipped = tape.mul_const(clipped, adv)?;
    let objective = tape.min(surr, surr_clipped)?;
    let bonus = tape.scale(entropy, config.entropy_beta);
    let with_entropy = tape.sub(objective, bonus)?;
    Ok(tape.scale(with_entropy, -1.0))
}

/// Per-step clipped value loss, an `[n, 1]` column:
/// `c1·max((R − V)², (R − V̂)²)` with `V̂ = V_old + clip(V − V_old, −ε, ε)`.
pub fn pvo_critic_terms(
    tape: &mut Tape,
    returns: &[f64],
    value_new: Var,
    value_old: &[f64],
    config: &LossConfig,
) -> Result<Var> {
    let n = tape.value(value_new).len();
    if returns.len() != n || value_old.len() != n {
        return Err(Error::Usage("critic loss inputs differ in length".into()));
    }
    let eps = config.clip_epsilon;
    let old = Tensor::column(value_old);
    let ret = Tensor::column(returns);
    let neg_old = old.map(|v| -v);
    let delta = tape.add_const(value_new, neg_old)?;
    let delta = tape.clamp(delta, -eps, eps);
    let v_clipped = tape.add_const(delta, old)?;
    let neg_ret = ret.map(|v| -v);
    let err = tape.add_const(value_new, neg_ret.clone())?;
    let err_clipped = tape.add_const(v_clipped, neg_ret)?;
    let sq = tape.square(err);
    let sq_clipped = tape.square(err_clipped);
    let worst = tape.max(sq, sq_clipped)?;
    Ok(tape.scale(worst, config.critic_coef))
}

fn mean_of(tape: &mut Tape, terms: Var) -> Result<f64> {
    let n = tape.value(terms).len();
    if n == 0 {
        return Ok(0.0);
    }
    let total = tape.sum(terms);
    let mean = tape.scale(total, 1.0 / n as f64);
    tape.value(mean).item()
}

/// Mean PPO actor loss over plain values.
pub fn ppo_actor_loss(
    log_prob_new: &[f64],
    log_prob_old: &[f64],
    advantage: &[f64],
    entropy: &[f64],
    config: &LossConfig,
) -> Result<f64> {
    if log_prob_new.iter().chain(log_prob_old).any(|&lp| !(lp <= 0.0)) {
        return Err(Error::Usage("log-probabilities must be ≤ 0".into()));
    }
    let mut tape = Tape::new();
    let lp = tape.constant(Tensor::column(log_prob_new));
    let ent = tape.constant(Tensor::column(entropy));
    let terms = ppo_actor_terms(&mut tape, lp, log_prob_old, advantage, ent, config)?;
    mean_of(&mut tape, terms)
}

/// Mean clipped value loss of one critic over plain values.
pub fn pvo_critic_loss(
    returns: &[f64],
    value_new: &[f64],
    value_old: &[f64],
    config: &LossConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::column(value_new));
    let terms = pvo_critic_terms(&mut tape, returns, v, value_old, config)?;
    mean_of(&mut tape, terms)
}
