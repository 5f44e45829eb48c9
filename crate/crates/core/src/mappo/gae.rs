use std::collections::BTreeMap;
use std::sync::Arc;

use super::trajectory::Trajectory;
use super::MappoError;
use crate::policy::EncodedCritic;

/// Generalised advantage estimates for one record sequence. `bootstrap` is
/// the value after the last record (0 at episode end).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, MappoError> {
    if rewards.len() != values.len() {
        return Err(MappoError::LengthMismatch {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let next = values.get(t + 1).copied().unwrap_or(bootstrap);
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// Discounted reward-to-go along a sequence, ending at zero.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticTarget {
    pub step: usize,
    pub target: f64,
    pub input: Arc<EncodedCritic>,
}

/// Per-step critic target: the mean, over agents holding a record at that
/// step, of each agent's discounted reward-to-go.
pub fn compute_v_targ_prime(trajectories: &[Trajectory], gamma: f64) -> Vec<CriticTarget> {
    let mut acc: BTreeMap<usize, (f64, usize, Arc<EncodedCritic>)> = BTreeMap::new();
    for t in trajectories {
        let g = discounted_returns(&t.rewards(), gamma);
        for (r, v) in t.records.iter().zip(g) {
            let e = acc
                .entry(r.step)
                .or_insert_with(|| (0.0, 0, Arc::clone(&r.critic_input)));
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(step, (sum, n, input))| CriticTarget {
            step,
            target: sum / n as f64,
            input,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_base_case() {
        let a = compute_gae(&[2.0], &[0.5], 1.5, 0.9, 0.7).unwrap();
        assert!((a[0] - (2.0 + 0.9 * 1.5 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_is_td_error() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let a = compute_gae(&r, &v, 0.0, 0.95, 0.0).unwrap();
        assert!((a[0] - (1.0 + 0.95 * 0.1 - 0.3)).abs() < 1e-15);
        assert!((a[2] - (2.0 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            compute_gae(&[1.0], &[], 0.0, 0.9, 0.9),
            Err(MappoError::LengthMismatch { .. })
        ));
    }
}
