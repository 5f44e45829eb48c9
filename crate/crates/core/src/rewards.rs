//! Per-agent reward shaping.
//!
//! The patrol part blends a team-level idleness score with a difference
//! reward that isolates each agent's own contribution. The battery part
//! penalises running empty and deviating from the desired landing level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{AgentId, StepOutcome};
use crate::gridmap::{CellKind, GridMap, Loc};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("idleness must be non-negative, got {0}")]
    NegativeIdleness(f64),
    #[error("map has no vertex cells")]
    NoVertices,
    #[error("battery {0} outside [0, 1]")]
    BatteryOutOfRange(f64),
    #[error("idleness buffer has {got} cells, map has {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub c_norm: f64,
    /// Weight of the team idleness score.
    pub c_rp: f64,
    /// Weight of the difference reward.
    pub c_rd: f64,
    /// Penalty magnitude for running out of battery.
    pub c_b: f64,
    pub c_recharge: f64,
    pub c_patrol: f64,
    pub b_l: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            c_norm: 150.0,
            c_rp: 0.5,
            c_rd: 50.0,
            c_b: 50.0,
            c_recharge: 1.0,
            c_patrol: 25.0,
            b_l: 0.1,
        }
    }
}

/// Maps idleness into `[0, 1)`.
pub fn normalize_idleness(idleness: f64, c_norm: f64) -> Result<f64, RewardError> {
    if idleness < 0.0 || idleness.is_nan() {
        return Err(RewardError::NegativeIdleness(idleness));
    }
    Ok(1.0 - (-idleness / c_norm).exp())
}

/// Team idleness score over vertex cells: 1 when every vertex was just
/// visited, approaching 0 as idleness grows.
pub fn patrol_reward_base(
    map: &GridMap,
    idleness: &[f64],
    c_norm: f64,
) -> Result<f64, RewardError> {
    if idleness.len() != map.len() {
        return Err(RewardError::SizeMismatch {
            expected: map.len(),
            got: idleness.len(),
        });
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut n = 0usize;
    for (&v, c) in idleness.iter().zip(map.cells()) {
        if *c == CellKind::Vertex {
            let f = normalize_idleness(v, c_norm)?;
            sum += f;
            max = max.max(f);
            n += 1;
        }
    }
    if n == 0 {
        return Err(RewardError::NoVertices);
    }
    let mean = sum / n as f64;
    Ok((2.0 - mean - max) / 2.0)
}

/// What the world would have looked like had agent k stayed put.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counterfactual {
    pub prev: Loc,
    pub new: Loc,
    /// Idleness of `new` after the per-step increase, before visits reset it.
    pub new_cell_pre_reset: f64,
    /// Whether another agent also occupies `new` after the step.
    pub new_cell_shared: bool,
}

/// Difference reward `G(z) - G(z_{-k})`.
pub fn difference_reward(
    map: &GridMap,
    idleness_after: &[f64],
    cf: &Counterfactual,
    c_norm: f64,
) -> Result<f64, RewardError> {
    let actual = patrol_reward_base(map, idleness_after, c_norm)?;
    let mut without = idleness_after.to_vec();
    let prev = map.index(cf.prev);
    let new = map.index(cf.new);
    if cf.new != cf.prev && !cf.new_cell_shared && map.cells()[new] == CellKind::Vertex {
        without[new] = cf.new_cell_pre_reset;
    }
    if map.cells()[prev] == CellKind::Vertex {
        without[prev] = 0.0;
    }
    Ok(actual - patrol_reward_base(map, &without, c_norm)?)
}

pub fn patrol_reward(base: f64, d_k: f64, params: &RewardParams) -> f64 {
    params.c_rp * base + params.c_rd * d_k
}

pub fn battery_failure_penalty(ran_out: bool, c_b: f64) -> f64 {
    if ran_out {
        -c_b
    } else {
        0.0
    }
}

/// Distance from the desired landing level, scaled to `[0, 1]` on each side.
pub fn recharge_term(battery: f64, b_l: f64) -> f64 {
    if battery <= b_l {
        1.0 - battery / b_l
    } else {
        (battery - b_l) / (1.0 - b_l)
    }
}

/// How far below the landing level an agent is while still flying.
pub fn patrol_term(battery: f64, b_l: f64) -> f64 {
    if battery <= b_l {
        b_l - battery
    } else {
        0.0
    }
}

/// Signed battery-threshold penalty (never positive).
pub fn battery_threshold_penalty(
    battery: f64,
    recharged: bool,
    params: &RewardParams,
) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&battery) {
        return Err(RewardError::BatteryOutOfRange(battery));
    }
    let rech = if recharged {
        recharge_term(battery, params.b_l)
    } else {
        0.0
    };
    let patrol = patrol_term(battery, params.b_l);
    Ok(-(params.c_recharge * rech + params.c_patrol * patrol))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub base: f64,
    pub difference: f64,
    pub patrol: f64,
    pub failure: f64,
    pub threshold: f64,
    pub total: f64,
}

/// Rewards for every agent that acted in `outcome`, in id order.
pub fn step_rewards(
    map: &GridMap,
    idleness_after: &[f64],
    outcome: &StepOutcome,
    params: &RewardParams,
) -> Result<Vec<(AgentId, RewardBreakdown)>, RewardError> {
    let base = patrol_reward_base(map, idleness_after, params.c_norm)?;
    outcome
        .moves
        .iter()
        .map(|m| {
            let failed = outcome.failed(m.id);
            let shared = outcome
                .moves
                .iter()
                .any(|o| o.id != m.id && o.to == m.to && !outcome.failed(o.id));
            let cf = Counterfactual {
                prev: m.from,
                new: m.to,
                new_cell_pre_reset: outcome.pre_reset_idleness[map.index(m.to)],
                new_cell_shared: shared,
            };
            let difference = difference_reward(map, idleness_after, &cf, params.c_norm)?;
            let patrol = patrol_reward(base, difference, params);
            let failure = battery_failure_penalty(failed, params.c_b);
            let threshold = battery_threshold_penalty(m.battery, outcome.recharged(m.id), params)?;
            Ok((
                m.id,
                RewardBreakdown {
                    base,
                    difference,
                    patrol,
                    failure,
                    threshold,
                    total: patrol + failure + threshold,
                },
            ))
        })
        .collect()
}
