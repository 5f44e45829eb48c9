//! Comparison strategies: reactive patrolling and independently trained
//! per-agent actors.

mod cr;

pub use cr::{cr_action, cr_critical_point, cr_patrol_action, CrMode, CrParams, CrState};

use crate::mappo::{EpisodeSpec, TrainConfig};

/// Variant of `cfg` with one actor per agent and no experience sharing:
/// one single-agent episode per actor, random subsets of every intermediate
/// size, and one episode with all actors together.
pub fn individual_learner_config(cfg: &TrainConfig) -> TrainConfig {
    let n = cfg.max_agents;
    let mut plan: Vec<EpisodeSpec> = (0..n).map(|i| EpisodeSpec::Learners(vec![i])).collect();
    plan.extend((2..n).map(EpisodeSpec::RandomSubset));
    if n > 1 {
        plan.push(EpisodeSpec::Learners((0..n).collect()));
    }
    TrainConfig {
        plan,
        actors: n,
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_episode_plan_for_five_agents() {
        let c = individual_learner_config(&TrainConfig::default());
        assert_eq!(c.actors, 5);
        assert_eq!(c.plan.len(), 9);
        let counts: Vec<usize> = c.plan.iter().map(|s| s.agent_count()).collect();
        assert_eq!(counts, vec![1, 1, 1, 1, 1, 2, 3, 4, 5]);
        c.validate().unwrap();
    }
}
