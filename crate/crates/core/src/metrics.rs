//! Evaluation statistics: idleness summaries, battery and failure-rate
//! statistics, daily series and randomized fault schedules.

use rand::Rng;
use thiserror::Error;

use crate::environment::{AgentId, EnvState, StepOutcome};
use crate::seed::SimRng;

/// Steps excluded from the start of every evaluation episode.
pub const DEFAULT_WARMUP: usize = 150;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace has {len} steps, need more than the {warmup}-step warmup")]
    TraceTooShort { len: usize, warmup: usize },
    #[error("no input to summarise")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RechargeEvent {
    pub step: usize,
    pub agent: AgentId,
    pub battery: f64,
}

/// Per-step record of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    /// Mean vertex idleness after each step, in raw timesteps.
    pub mean_idleness: Vec<f64>,
    pub max_idleness: Vec<f64>,
    pub durations: Vec<f64>,
    /// Non-failed agents after each step.
    pub agent_counts: Vec<usize>,
    pub recharges: Vec<RechargeEvent>,
    pub failures: Vec<(usize, AgentId)>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.mean_idleness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_idleness.is_empty()
    }

    /// Appends the state reached by one step.
    pub fn record(&mut self, env: &EnvState, outcome: &StepOutcome) {
        let step = self.len();
        let (mean, max) = env.idleness().vertex_mean_max(env.map());
        self.mean_idleness.push(mean);
        self.max_idleness.push(max);
        self.durations.push(outcome.duration);
        self.agent_counts.push(env.live_count());
        self.recharges.extend(
            outcome
                .intentional_recharges
                .iter()
                .map(|&(agent, battery)| RechargeEvent {
                    step,
                    agent,
                    battery,
                }),
        );
        self.failures
            .extend(outcome.battery_failures.iter().map(|&id| (step, id)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatrolSummary {
    /// Mean of per-step mean idleness over the window.
    pub avg: f64,
    /// Mean of per-step maximum idleness over the window.
    pub max_bar: f64,
    /// Largest idleness seen anywhere in the window.
    pub max: f64,
    pub warmup: usize,
    pub window: usize,
}

pub fn summarize_patrol(
    trace: &EpisodeTrace,
    warmup: usize,
) -> Result<PatrolSummary, MetricsError> {
    let len = trace.len();
    if len <= warmup {
        return Err(MetricsError::TraceTooShort { len, warmup });
    }
    let window = len - warmup;
    let avg = trace.mean_idleness[warmup..].iter().sum::<f64>() / window as f64;
    let max_bar = trace.max_idleness[warmup..].iter().sum::<f64>() / window as f64;
    let max = trace.max_idleness[warmup..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PatrolSummary {
        avg,
        max_bar,
        max,
        warmup,
        window,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Battery table entries. `None` marks a quantity with no underlying events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStats {
    pub mean_battery: Option<f64>,
    pub std_battery: Option<f64>,
    pub failure_rate: Option<f64>,
    pub failure_rate_std: Option<f64>,
    pub recharges: usize,
    pub failures: usize,
}

/// Failures divided by recharge-requiring events (recharges plus failures)
/// for one test; `None` when there were no such events.
pub fn failure_rate(traces: &[EpisodeTrace]) -> Option<f64> {
    let failures: usize = traces.iter().map(|t| t.failures.len()).sum();
    let recharges: usize = traces.iter().map(|t| t.recharges.len()).sum();
    let events = failures + recharges;
    (events > 0).then(|| failures as f64 / events as f64)
}

/// Aggregates a grid of tests, each holding one or more episodes. Landing
/// batteries are pooled over every event; failure rates are computed per
/// test and then averaged over the tests that had events. The failure rate
/// is `None` when no test saw a failure at all.
pub fn battery_stats(tests: &[Vec<EpisodeTrace>]) -> BatteryStats {
    let batteries: Vec<f64> = tests
        .iter()
        .flatten()
        .flat_map(|t| t.recharges.iter().map(|r| r.battery))
        .collect();
    let rates: Vec<f64> = tests.iter().filter_map(|t| failure_rate(t)).collect();
    let failures: usize = tests.iter().flatten().map(|t| t.failures.len()).sum();
    let b = mean_std(&batteries);
    let f = if failures == 0 {
        None
    } else {
        mean_std(&rates)
    };
    BatteryStats {
        mean_battery: b.map(|x| x.0),
        std_battery: b.map(|x| x.1),
        failure_rate: f.map(|x| x.0),
        failure_rate_std: f.map(|x| x.1),
        recharges: batteries.len(),
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEvent {
    /// Day at whose start the event applies.
    pub day: usize,
    pub fail: usize,
    pub add: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSchedule {
    pub initial: usize,
    pub events: Vec<FaultEvent>,
}

impl FaultSchedule {
    /// Agent count in effect during `day`.
    pub fn count_on(&self, day: usize) -> usize {
        self.events
            .iter()
            .filter(|e| e.day <= day)
            .fold(self.initial, |n, e| n - e.fail + e.add)
    }
}

/// Random schedule: an initial count in `1..=max_total`, then at every
/// `interval`-day boundary fail some agents (keeping at least one) and add
/// some (never exceeding `max_total`).
pub fn fault_tolerance_schedule(
    horizon_days: usize,
    interval: usize,
    max_total: usize,
    rng: &mut SimRng,
) -> FaultSchedule {
    let initial = rng.random_range(1..=max_total);
    let mut current = initial;
    let mut events = Vec::new();
    let mut day = interval;
    while day < horizon_days {
        let fail = rng.random_range(0..current);
        let after_fail = current - fail;
        let add = rng.random_range(0..=max_total - after_fail);
        current = after_fail + add;
        events.push(FaultEvent { day, fail, add });
        day += interval;
    }
    FaultSchedule { initial, events }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyRow {
    pub day: usize,
    pub agent_count: usize,
    pub avg: f64,
    pub max_bar: f64,
    /// Mean landing battery that day; `None` without landings.
    pub mean_recharge_battery: Option<f64>,
}

/// Buckets a long trace into days of `steps_per_day` steps. Idleness
/// statistics skip the first `warmup` steps of the trace unless that would
/// leave a day empty; the agent count is always taken at the day's start.
pub fn daily_series(trace: &EpisodeTrace, steps_per_day: usize, warmup: usize) -> Vec<DailyRow> {
    let days = trace.len().div_ceil(steps_per_day.max(1));
    (0..days)
        .map(|d| {
            let start = d * steps_per_day;
            let hi = ((d + 1) * steps_per_day).min(trace.len());
            let lo = if warmup < hi {
                start.max(warmup)
            } else {
                start
            };
            let n = (hi - lo) as f64;
            let batteries: Vec<f64> = trace
                .recharges
                .iter()
                .filter(|r| (lo..hi).contains(&r.step))
                .map(|r| r.battery)
                .collect();
            DailyRow {
                day: d,
                agent_count: trace.agent_counts[start],
                avg: trace.mean_idleness[lo..hi].iter().sum::<f64>() / n,
                max_bar: trace.max_idleness[lo..hi].iter().sum::<f64>() / n,
                mean_recharge_battery: mean_std(&batteries).map(|x| x.0),
            }
        })
        .collect()
}
