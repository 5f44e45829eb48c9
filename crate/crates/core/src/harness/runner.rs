//! Evaluation episodes for every strategy, with optional scripted faults.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;

use super::HarnessError;
use crate::baselines::{cr_action, CrParams, CrState};
use crate::environment::{AgentId, EnvConfig, EnvState};
use crate::gridmap::{Action, GridMap};
use crate::metrics::{EpisodeTrace, FaultSchedule};
use crate::policy::{encode_actor, sample_action, PolicySet};
use crate::seed::{derive_rng, derive_seed};

/// Decision rule for every agent in an episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Agent `id` samples from actor `id % actors`.
    Policy(&'a PolicySet),
    Cr(CrParams),
}

#[derive(Debug, Clone)]
pub struct EvalContext {
    pub map: Arc<GridMap>,
    pub env: EnvConfig,
    pub c_norm: f64,
}

/// Fault events applied at the start of the scheduled days.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPlan {
    pub schedule: FaultSchedule,
    pub steps_per_day: usize,
}

/// Runs one episode of `horizon` steps starting with `n_agents` agents.
/// Battery failures do not stop the episode.
pub fn run_episode(
    ctx: &EvalContext,
    controller: Controller<'_>,
    n_agents: usize,
    horizon: usize,
    seed: u64,
    faults: Option<&FaultPlan>,
) -> Result<EpisodeTrace, HarnessError> {
    if let Controller::Policy(p) = controller {
        if (p.arch.rows, p.arch.cols) != (ctx.map.rows(), ctx.map.cols()) {
            return Err(HarnessError::Config(format!(
                "policy expects a {}x{} map, got {}x{}",
                p.arch.rows,
                p.arch.cols,
                ctx.map.rows(),
                ctx.map.cols()
            )));
        }
    }
    let mut env = EnvState::reset(
        Arc::clone(&ctx.map),
        ctx.env.clone(),
        n_agents,
        derive_seed(seed, &[0]),
    )?;
    let mut act_rng = derive_rng(seed, &[1]);
    let mut fault_rng = derive_rng(seed, &[2]);
    let mut cr_states: BTreeMap<AgentId, CrState> = BTreeMap::new();
    let mut trace = EpisodeTrace::default();
    for t in 0..horizon {
        if let Some(plan) = faults {
            if t > 0 && t % plan.steps_per_day == 0 {
                let day = t / plan.steps_per_day;
                for ev in plan.schedule.events.iter().filter(|e| e.day == day) {
                    let live: Vec<AgentId> = env
                        .agents()
                        .iter()
                        .filter(|a| !a.is_failed())
                        .map(|a| a.id)
                        .collect();
                    let k = ev.fail.min(live.len());
                    for i in sample(&mut fault_rng, live.len(), k) {
                        env.fail_agent(live[i])?;
                    }
                    for _ in 0..ev.add {
                        env.add_agent()?;
                    }
                }
            }
        }
        let acting = env.acting_agents();
        let mut actions: Vec<(AgentId, Action)> = Vec::with_capacity(acting.len());
        match controller {
            Controller::Policy(policy) => {
                for &id in &acting {
                    let enc = encode_actor(&env.observe_actor(id, ctx.c_norm)?)?;
                    let probs = policy.action_probs(id.0 % policy.actors.len(), &enc)?;
                    actions.push((id, sample_action(&probs, &mut act_rng).0));
                }
            }
            Controller::Cr(params) => {
                for &id in &acting {
                    let agent = env.agent(id).expect("acting agent exists");
                    let mut idle = env.idleness().values().to_vec();
                    for other in env.agents() {
                        if other.id != id && other.is_patrolling() {
                            idle[env.map().index(other.loc)] = 0.0;
                        }
                    }
                    let state = cr_states.entry(id).or_default();
                    let a = cr_action(
                        env.map(),
                        &idle,
                        agent.loc,
                        agent.battery,
                        state,
                        &params,
                        &mut act_rng,
                    )?;
                    actions.push((id, a));
                }
            }
        }
        let outcome = env.step(&actions)?;
        trace.record(&env, &outcome);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FaultEvent;

    fn ctx() -> EvalContext {
        EvalContext {
            map: Arc::new(
                GridMap::parse("5 0 0 0 0\n0 0 0 0 0\n0 0 -1 0 0\n0 0 0 0 0\n0 0 0 0 0\n").unwrap(),
            ),
            env: EnvConfig {
                max_agents: 4,
                ..EnvConfig::default()
            },
            c_norm: 150.0,
        }
    }

    #[test]
    fn cr_episode_is_reproducible() {
        let c = ctx();
        let a = run_episode(&c, Controller::Cr(CrParams::default()), 2, 300, 9, None).unwrap();
        let b = run_episode(&c, Controller::Cr(CrParams::default()), 2, 300, 9, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
    }

    #[test]
    fn scripted_faults_change_counts() {
        let c = ctx();
        let plan = FaultPlan {
            schedule: FaultSchedule {
                initial: 3,
                events: vec![
                    FaultEvent {
                        day: 1,
                        fail: 2,
                        add: 0,
                    },
                    FaultEvent {
                        day: 2,
                        fail: 0,
                        add: 1,
                    },
                ],
            },
            steps_per_day: 50,
        };
        let cfg = CrParams {
            margin: 30.0,
            ..CrParams::default()
        };
        let t = run_episode(&c, Controller::Cr(cfg), 3, 150, 1, Some(&plan)).unwrap();
        assert!(t.failures.is_empty());
        assert_eq!(
            (t.agent_counts[0], t.agent_counts[50], t.agent_counts[100]),
            (3, 1, 2)
        );
    }
}
