//! Generalized advantage estimation.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum GaeError {
    #[error("shape mismatch: rewards {rewards}, values {values}, dones {dones}")]
    ShapeMismatch { rewards: usize, values: usize, dones: usize },
}

/// Exponentially-weighted sums of TD residuals. `dones` marks episode
/// boundaries; the value after a terminal step bootstraps to zero (all
/// games here are fixed-horizon, so every episode ends on a done).
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), GaeError> {
    let h = rewards.len();
    if values.len() != h || dones.len() != h {
        return Err(GaeError::ShapeMismatch {
            rewards: h,
            values: values.len(),
            dones: dones.len(),
        });
    }
    let mut advantages = vec![0.0; h];
    let mut acc = 0.0;
    for t in (0..h).rev() {
        let (next_value, next_acc) = if t + 1 < h && !dones[t] {
            (values[t + 1], acc)
        } else {
            (0.0, 0.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * next_acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gae_bruteforce;
    use crate::rng::RngStream;

    #[test]
    fn one_step_episode_reduces_to_reward_minus_value() {
        let (adv, ret) = compute_gae(&[3.0], &[1.25], &[true], 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![3.0 - 1.25]);
        assert_eq!(ret, vec![3.0]);
    }

    #[test]
    fn gamma_zero_gives_td_zero_advantages() {
        let rewards = [1.0, -0.5, 2.0, 0.0];
        let values = [0.3, 0.1, -0.2, 0.9];
        let dones = [false, false, false, true];
        let (adv, _) = compute_gae(&rewards, &values, &dones, 0.0, 0.95).unwrap();
        for t in 0..4 {
            assert!((adv[t] - (rewards[t] - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_the_nstep_bruteforce_definition() {
        let root = RngStream::new(99);
        for ep in 0..100u64 {
            let mut rng = root.derive(ep + 1);
            let h = 16 + rng.index(17);
            let rewards: Vec<f64> = (0..h).map(|_| rng.normal() * 3.0).collect();
            let values: Vec<f64> = (0..h).map(|_| rng.normal()).collect();
            let mut dones = vec![false; h];
            dones[h - 1] = true;
            let gamma = 0.9 + 0.1 * rng.uniform();
            let lambda = rng.uniform();
            let (fast, _) = compute_gae(&rewards, &values, &dones, gamma, lambda).unwrap();
            let slow = gae_bruteforce(&rewards, &values, gamma, lambda);
            for t in 0..h {
                assert!(
                    (fast[t] - slow[t]).abs() < 1e-10,
                    "ep {ep} t {t}: {} vs {}",
                    fast[t],
                    slow[t]
                );
            }
        }
    }

    #[test]
    fn returns_equal_advantages_plus_values() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, 0.5, 0.5];
        let dones = [false, false, true];
        let (adv, ret) = compute_gae(&rewards, &values, &dones, 0.99, 0.95).unwrap();
        for t in 0..3 {
            assert!((ret[t] - (adv[t] + values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_error() {
        let err = compute_gae(&[1.0, 2.0], &[0.0], &[true], 0.99, 0.95).unwrap_err();
        assert!(matches!(err, GaeError::ShapeMismatch { .. }));
    }

    #[test]
    fn mid_buffer_done_resets_the_accumulator() {
        // Two length-2 episodes packed back to back.
        let rewards = [1.0, 1.0, 1.0, 1.0];
        let values = [0.0, 0.0, 0.0, 0.0];
        let dones = [false, true, false, true];
        let (adv, _) = compute_gae(&rewards, &values, &dones, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![2.0, 1.0, 2.0, 1.0]);
    }
}
