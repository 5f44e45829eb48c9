use std::sync::Arc;

use rayon::prelude::*;

use super::trajectory::{Trajectory, TransitionRecord};
use super::MappoError;
use crate::environment::{AgentStatus, EnvConfig, EnvState};
use crate::gridmap::GridMap;
use crate::policy::{encode_actor, encode_critic, sample_action, PolicySet};
use crate::rewards::{step_rewards, RewardParams};
use crate::seed::{derive_rng, derive_seed};

/// One training episode: which actor drives each agent, and its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRequest {
    /// `learners[i]` is the actor index for agent `i`.
    pub learners: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub agent_count: usize,
    pub trajectories: Vec<Trajectory>,
    pub steps: usize,
    pub terminated_by_failure: bool,
    /// Battery left at each intentional landing.
    pub recharge_batteries: Vec<f64>,
    pub failures: usize,
}

/// Runs one episode to `horizon` steps or until any agent runs out of
/// battery. Agents away hot-swapping produce no records.
pub fn collect_episode(
    policy: &PolicySet,
    map: &Arc<GridMap>,
    env_cfg: &EnvConfig,
    reward: &RewardParams,
    horizon: usize,
    req: &EpisodeRequest,
) -> Result<EpisodeData, MappoError> {
    let n = req.learners.len();
    let slots = policy.arch.max_agents;
    let mut env = EnvState::reset(
        Arc::clone(map),
        env_cfg.clone(),
        n,
        derive_seed(req.seed, &[0]),
    )?;
    let mut rng = derive_rng(req.seed, &[1]);
    let mut trajectories: Vec<Trajectory> = env
        .agents()
        .iter()
        .zip(&req.learners)
        .map(|(a, &l)| Trajectory::new(a.id, l))
        .collect();
    let mut data = EpisodeData {
        agent_count: n,
        trajectories: Vec::new(),
        steps: 0,
        terminated_by_failure: false,
        recharge_batteries: Vec::new(),
        failures: 0,
    };
    for t in 0..horizon {
        for (traj, agent) in trajectories.iter_mut().zip(env.agents()) {
            if matches!(agent.status, AgentStatus::Swapping { .. }) {
                traj.swap_steps.push(t);
            }
        }
        let acting = env.acting_agents();
        if acting.is_empty() {
            env.step(&[])?;
            data.steps = t + 1;
            continue;
        }
        let critic = Arc::new(encode_critic(
            &env.observe_critic(slots, reward.c_norm)?,
            slots,
        )?);
        let value = policy.value(&critic)?;
        let mut pending = Vec::with_capacity(acting.len());
        for &id in &acting {
            let enc = Arc::new(encode_actor(&env.observe_actor(id, reward.c_norm)?)?);
            let probs = policy.action_probs(req.learners[id.0], &enc)?;
            let (action, prob) = sample_action(&probs, &mut rng);
            pending.push((id, enc, action, prob));
        }
        let actions: Vec<_> = pending.iter().map(|(id, _, a, _)| (*id, *a)).collect();
        let outcome = env.step(&actions)?;
        let rewards = step_rewards(env.map(), env.idleness().values(), &outcome, reward)?;
        for ((id, enc, action, prob), (rid, r)) in pending.into_iter().zip(rewards) {
            debug_assert_eq!(id, rid);
            trajectories[id.0].records.push(TransitionRecord {
                step: t,
                critic_input: Arc::clone(&critic),
                actor_input: enc,
                action,
                prob,
                reward: r.total,
                value,
                filled: false,
            });
        }
        data.recharge_batteries
            .extend(outcome.intentional_recharges.iter().map(|(_, b)| *b));
        data.steps = t + 1;
        if !outcome.battery_failures.is_empty() {
            data.failures += outcome.battery_failures.len();
            data.terminated_by_failure = true;
            break;
        }
    }
    data.trajectories = trajectories;
    Ok(data)
}

/// Collects every requested episode in parallel. Results keep request order
/// and depend only on each request's seed.
pub fn collect_round(
    policy: &PolicySet,
    map: &Arc<GridMap>,
    env_cfg: &EnvConfig,
    reward: &RewardParams,
    horizon: usize,
    requests: &[EpisodeRequest],
) -> Result<Vec<EpisodeData>, MappoError> {
    requests
        .par_iter()
        .map(|req| collect_episode(policy, map, env_cfg, reward, horizon, req))
        .collect()
}
