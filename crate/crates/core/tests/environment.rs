use std::sync::Arc;

use patrol_core::gridmap::{Action, GridMap};
use patrol_core::seed::derive_rng;
use patrol_core::{AgentId, AgentStatus, EnvConfig, EnvState};
use proptest::prelude::*;
use rand::Rng;

fn fig1() -> Arc<GridMap> {
    Arc::new(
        GridMap::load(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps/fig1.map"))
            .unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Per-step bookkeeping over random rollouts with full dynamics.
    #[test]
    fn rollout_invariants(seed: u64, n in 1usize..=4) {
        let map = fig1();
        let cfg = EnvConfig { max_agents: 4, ..EnvConfig::default() };
        let mut env = EnvState::reset(Arc::clone(&map), cfg.clone(), n, seed).unwrap();
        let mut rng = derive_rng(seed, &[9]);
        for _ in 0..400 {
            let before = env.agents().to_vec();
            let acts: Vec<(AgentId, Action)> = env.acting_agents().into_iter().map(|id| {
                let m = map.valid_actions(env.agent(id).unwrap().loc).unwrap();
                let valid: Vec<Action> = Action::ALL.into_iter().filter(|a| m[a.index()]).collect();
                (id, valid[rng.random_range(0..valid.len())])
            }).collect();
            let out = env.step(&acts).unwrap();
            prop_assert!((1.0 - cfg.idle_jitter..=1.0 + cfg.idle_jitter).contains(&out.duration));
            prop_assert_eq!(env.agents().len(), n);
            for (a, b) in before.iter().zip(env.agents()) {
                match a.status {
                    // Swapping agents stay put; their battery only changes on redeploy.
                    AgentStatus::Swapping { .. } => {
                        prop_assert_eq!(a.loc, b.loc);
                        if out.redeployed.contains(&a.id) {
                            prop_assert_eq!(b.battery, 1.0);
                        } else {
                            prop_assert_eq!(a.battery, b.battery);
                        }
                    }
                    AgentStatus::Failed => prop_assert_eq!(a, b),
                    AgentStatus::Patrolling => {
                        prop_assert!(b.battery < a.battery || b.battery == 0.0);
                        prop_assert!(a.loc.0.abs_diff(b.loc.0) + a.loc.1.abs_diff(b.loc.1) <= 1);
                    }
                }
            }
            for v in env.idleness().values() {
                prop_assert!(*v <= cfg.idle_cap);
            }
        }
    }

    /// A step drains `duration * (1 + extra) / b_max` with `extra` in range.
    #[test]
    fn drain_stays_in_band(seed: u64) {
        let map = fig1();
        let cfg = EnvConfig { max_agents: 1, ..EnvConfig::default() };
        let mut env = EnvState::reset(Arc::clone(&map), cfg.clone(), 1, seed).unwrap();
        env.set_location(AgentId(0), (0, 0)).unwrap();
        env.set_battery(AgentId(0), 1.0).unwrap();
        let out = env.step(&[(AgentId(0), Action::Right)]).unwrap();
        let used = 1.0 - env.agent(AgentId(0)).unwrap().battery;
        let lo = out.duration / cfg.b_max;
        let hi = out.duration * (1.0 + cfg.drain_extra_max) / cfg.b_max;
        prop_assert!(used >= lo - 1e-15 && used <= hi + 1e-15);
    }
}

#[test]
fn swap_length_within_bounds() {
    let map = fig1();
    let cfg = EnvConfig {
        max_agents: 1,
        ..EnvConfig::default()
    }
    .deterministic();
    let station = map.stations()[0];
    for seed in 0..200 {
        let mut env = EnvState::reset(Arc::clone(&map), cfg.clone(), 1, seed).unwrap();
        env.set_location(AgentId(0), (station.0 - 1, station.1))
            .unwrap();
        let out = env.step(&[(AgentId(0), Action::Down)]).unwrap();
        assert_eq!(out.intentional_recharges.len(), 1);
        let mut waited = 0;
        while env.acting_agents().is_empty() {
            env.step(&[]).unwrap();
            waited += 1;
        }
        assert!((80..=150).contains(&waited), "{waited}");
        assert_eq!(env.agent(AgentId(0)).unwrap().battery, 1.0);
    }
}
