use super::LossConfig;
use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Usage(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// `R_t = r_t + γ·R_{t+1}` with `R` after the last step equal to
/// `bootstrap`. When `episodic` is set the recursion restarts after every
/// step flagged `done`.
pub fn discounted_returns(
    rewards: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    episodic: bool,
) -> Result<Vec<f64>> {
    same_len(rewards.len(), dones.len())?;
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if episodic && dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    Ok(out)
}

/// `R − V` elementwise.
pub fn advantage(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    same_len(returns.len(), values.len())?;
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// `w_ext·A_ext + w_int·A_int`.
pub fn mixed_advantage(adv_ext: &[f64], adv_int: &[f64], config: &LossConfig) -> Result<Vec<f64>> {
    same_len(adv_ext.len(), adv_int.len())?;
    if !(config.adv_weight_ext > config.adv_weight_int) {
        return Err(Error::Config(format!(
            "extrinsic weight {} must exceed intrinsic weight {}",
            config.adv_weight_ext, config.adv_weight_int
        )));
    }
    Ok(adv_ext
        .iter()
        .zip(adv_int)
        .map(|(e, i)| config.adv_weight_ext * e + config.adv_weight_int * i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct double sum: R_t = Σ_k γ^k r_{t+k}, stopping after a done step
    /// in episodic mode, plus the discounted bootstrap if no stop occurred.
    fn brute_force(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, episodic: bool) -> Vec<f64> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut stopped = false;
                for k in t..n {
                    total += gamma.powi((k - t) as i32) * rewards[k];
                    if episodic && dones[k] {
                        stopped = true;
                        break;
                    }
                }
                if !stopped {
                    total += gamma.powi((n - t) as i32) * bootstrap;
                }
                total
            })
            .collect()
    }

    #[test]
    fn geometric_example() {
        let r = discounted_returns(&[0.0, 0.0, 1.0], &[false; 3], 0.0, 0.5, true).unwrap();
        assert_eq!(r, vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn gamma_zero_is_myopic() {
        let rewards = [0.3, -1.0, 2.0];
        let r = discounted_returns(&rewards, &[false; 3], 5.0, 0.0, true).unwrap();
        assert_eq!(r, rewards.to_vec());
    }

    #[test]
    fn no_leakage_across_episode_boundary() {
        let r = discounted_returns(&[1.0, 1.0], &[true, false], 0.0, 0.9, true).unwrap();
        assert_eq!(r, vec![1.0, 1.0]);
        // non-episodic mode crosses the boundary
        let r = discounted_returns(&[1.0, 1.0], &[true, false], 0.0, 0.9, false).unwrap();
        assert_eq!(r, vec![1.9, 1.0]);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(&[1.0, 2.0], &[0.5, 0.5]).unwrap(), vec![0.5, 1.5]);
        assert_eq!(advantage(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), vec![0.0, 0.0]);
        assert!(advantage(&[1.0], &[]).is_err());
    }

    #[test]
    fn mixing_examples() {
        let cfg = LossConfig::default();
        assert_eq!(mixed_advantage(&[1.0], &[1.0], &cfg).unwrap(), vec![3.0]);
        assert_eq!(mixed_advantage(&[0.5, -1.0], &[0.0, 0.0], &cfg).unwrap(), vec![1.0, -2.0]);
        let bad = LossConfig {
            adv_weight_ext: 1.0,
            adv_weight_int: 1.0,
            ..cfg
        };
        assert!(matches!(mixed_advantage(&[1.0], &[1.0], &bad), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn returns_match_double_loop(
            steps in prop::collection::vec((-1.0f64..1.0, prop::bool::weighted(0.2)), 0..64),
            bootstrap in -2.0f64..2.0,
            gamma in 0.0f64..=1.0,
            episodic in any::<bool>(),
        ) {
            let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
            let dones: Vec<bool> = steps.iter().map(|s| s.1).collect();
            let fast = discounted_returns(&rewards, &dones, bootstrap, gamma, episodic).unwrap();
            let slow = brute_force(&rewards, &dones, bootstrap, gamma, episodic);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }

        #[test]
        fn advantage_is_elementwise_difference(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..32)) {
            let r: Vec<f64> = v.iter().map(|p| p.0).collect();
            let val: Vec<f64> = v.iter().map(|p| p.1).collect();
            let a = advantage(&r, &val).unwrap();
            for i in 0..v.len() {
                prop_assert_eq!(a[i], r[i] - val[i]);
            }
        }

        #[test]
        fn mixed_argmax_invariant_to_weight_scaling(
            v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..16),
            c in 0.01f64..100.0,
        ) {
            let e: Vec<f64> = v.iter().map(|p| p.0).collect();
            let i: Vec<f64> = v.iter().map(|p| p.1).collect();
            let base = LossConfig::default();
            let scaled = LossConfig { adv_weight_ext: base.adv_weight_ext * c, adv_weight_int: base.adv_weight_int * c, ..base };
            let argmax = |xs: &[f64]| xs.iter().enumerate().fold(0, |best, (k, x)| if *x > xs[best] { k } else { best });
            let a = mixed_advantage(&e, &i, &base).unwrap();
            let b = mixed_advantage(&e, &i, &scaled).unwrap();
            // scaling can reorder exact ties only
            let (ia, ib) = (argmax(&a), argmax(&b));
            prop_assert!(ia == ib || (a[ia] - a[ib]).abs() <= 1e-12 * a[ia].abs().max(1.0));
        }
    }
}
