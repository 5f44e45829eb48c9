use std::collections::BTreeMap;
use std::sync::Arc;

use crate::environment::AgentId;
use crate::gridmap::Action;
use crate::policy::{EncodedActor, EncodedCritic};

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    /// Episode step at which the action was taken.
    pub step: usize,
    pub critic_input: Arc<EncodedCritic>,
    pub actor_input: Arc<EncodedActor>,
    pub action: Action,
    /// Probability of `action` under the behaviour policy.
    pub prob: f64,
    pub reward: f64,
    /// Critic estimate for the state at `step`.
    pub value: f64,
    /// Copied from another agent to cover this agent's hot-swap.
    pub filled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent: AgentId,
    /// Index of the actor that controlled this agent.
    pub learner: usize,
    pub records: Vec<TransitionRecord>,
    /// Steps during which the agent was away hot-swapping.
    pub swap_steps: Vec<usize>,
}

impl Trajectory {
    pub fn new(agent: AgentId, learner: usize) -> Self {
        Trajectory {
            agent,
            learner,
            records: Vec::new(),
            swap_steps: Vec::new(),
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    /// Sum of rewards over the agent's own (unfilled) records.
    pub fn own_return(&self) -> f64 {
        self.records
            .iter()
            .filter(|r| !r.filled)
            .map(|r| r.reward)
            .sum()
    }
}

/// Fills every swap gap with copies of the lowest-id agent that acted at
/// that step. Steps at which nobody acted stay empty.
pub fn reconstruct_swap_gaps(trajectories: &mut [Trajectory]) {
    let mut donors: BTreeMap<usize, (AgentId, TransitionRecord)> = BTreeMap::new();
    for t in trajectories.iter() {
        for r in t.records.iter().filter(|r| !r.filled) {
            match donors.get(&r.step) {
                Some((id, _)) if *id <= t.agent => {}
                _ => {
                    donors.insert(r.step, (t.agent, r.clone()));
                }
            }
        }
    }
    for t in trajectories.iter_mut() {
        let mut added = false;
        for &s in &t.swap_steps {
            if t.records.iter().any(|r| r.step == s) {
                continue;
            }
            if let Some((_, donor)) = donors.get(&s) {
                let mut rec = donor.clone();
                rec.filled = true;
                t.records.push(rec);
                added = true;
            }
        }
        if added {
            t.records.sort_by_key(|r| r.step);
        }
    }
}
