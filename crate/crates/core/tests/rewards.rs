use std::sync::Arc;

use patrol_core::gridmap::{Action, CellKind, GridMap};
use patrol_core::rewards::{
    battery_threshold_penalty, normalize_idleness, patrol_reward_base, recharge_term, step_rewards,
};
use patrol_core::seed::derive_rng;
use patrol_core::{AgentId, EnvConfig, EnvState, RewardParams};
use proptest::prelude::*;
use rand::Rng;

fn fig1() -> GridMap {
    GridMap::load(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps/fig1.map"))
        .unwrap()
}

proptest! {
    #[test]
    fn normalisation_is_monotone_and_bounded(a in 0.0f64..5000.0, b in 0.0f64..5000.0) {
        let (fa, fb) = (normalize_idleness(a, 150.0).unwrap(), normalize_idleness(b, 150.0).unwrap());
        prop_assert!((0.0..=1.0).contains(&fa));
        prop_assert_eq!(a <= b, fa <= fb || fa == fb);
    }

    #[test]
    fn recharge_term_is_v_shaped(b_l in 0.05f64..0.3, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let (rx, ry) = (recharge_term(x, b_l), recharge_term(y, b_l));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&rx));
        // Farther from b_l on the same side never costs less.
        if (x - b_l) * (y - b_l) >= 0.0 && (x - b_l).abs() <= (y - b_l).abs() {
            prop_assert!(rx <= ry + 1e-12);
        }
    }

    #[test]
    fn threshold_penalty_is_never_positive(b in 0.0f64..=1.0, landed: bool) {
        let p = battery_threshold_penalty(b, landed, &RewardParams::default()).unwrap();
        prop_assert!(p <= 0.0);
        if !landed && b >= 0.1 {
            prop_assert_eq!(p, 0.0);
        }
    }

    #[test]
    fn base_reward_in_unit_interval(seed: u64) {
        let map = fig1();
        let mut rng = derive_rng(seed, &[]);
        let idle: Vec<f64> = map.cells().iter().map(|c| match c {
            CellKind::Vertex => rng.random_range(0.0..3000.0),
            CellKind::Obstacle => -1.0,
            CellKind::ChargingStation => 0.0,
        }).collect();
        let v = patrol_reward_base(&map, &idle, 150.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    /// The reward total is the sum of its parts, and agents sharing a step
    /// share the same base term.
    #[test]
    fn step_reward_composition(seed in 0u64..500) {
        let map = Arc::new(fig1());
        let cfg = EnvConfig { max_agents: 3, ..EnvConfig::default() };
        let mut env = EnvState::reset(Arc::clone(&map), cfg, 3, seed).unwrap();
        let mut rng = derive_rng(seed, &[1]);
        let params = RewardParams::default();
        for _ in 0..30 {
            let acts: Vec<(AgentId, Action)> = env.acting_agents().into_iter().map(|id| {
                let m = map.valid_actions(env.agent(id).unwrap().loc).unwrap();
                let valid: Vec<Action> = Action::ALL.into_iter().filter(|a| m[a.index()]).collect();
                (id, valid[rng.random_range(0..valid.len())])
            }).collect();
            let out = env.step(&acts).unwrap();
            let rs = step_rewards(&map, env.idleness().values(), &out, &params).unwrap();
            prop_assert_eq!(rs.len(), out.moves.len());
            for (_, r) in &rs {
                prop_assert!((r.total - (r.patrol + r.failure + r.threshold)).abs() < 1e-12);
                prop_assert!((r.patrol - (params.c_rp * r.base + params.c_rd * r.difference)).abs() < 1e-12);
                prop_assert_eq!(r.base, rs[0].1.base);
            }
        }
    }
}
