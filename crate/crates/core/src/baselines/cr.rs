//! Conscientious Reactive patrolling with shortest-path recharging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gridmap::{Action, GridMap, Loc, MapError};
use crate::seed::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrParams {
    pub b_l: f64,
    pub b_max: f64,
    /// Extra steps of battery kept in reserve beyond the path length.
    pub margin: f64,
}

impl Default for CrParams {
    fn default() -> Self {
        CrParams {
            b_l: 0.1,
            b_max: 550.0,
            margin: 5.0,
        }
    }
}

impl CrParams {
    /// Margin that makes agents land with roughly `target` battery.
    pub fn calibrated(b_l: f64, b_max: f64, target: f64) -> Self {
        CrParams {
            b_l,
            b_max,
            margin: ((target - b_l) * b_max).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrMode {
    Patrol,
    ReturnToCharge {
        path: Vec<Action>,
        /// Where the agent should be if the last move went as planned.
        expected: Option<Loc>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrState {
    pub mode: CrMode,
    last_battery: f64,
}

impl Default for CrState {
    fn default() -> Self {
        CrState {
            mode: CrMode::Patrol,
            last_battery: f64::INFINITY,
        }
    }
}

/// Battery fraction at which an agent at `loc` heads for the nearest station.
pub fn cr_critical_point(map: &GridMap, loc: Loc, params: &CrParams) -> Result<f64, MapError> {
    let d = map.station_distance(loc)?;
    Ok(params.b_l + (d as f64 + params.margin) / params.b_max)
}

/// Valid move into the stalest neighbour. `idleness` is the shared matrix
/// with cells held by other agents already zeroed. Stations are avoided
/// unless they are the only option, since landing on one starts a swap.
pub fn cr_patrol_action(
    map: &GridMap,
    idleness: &[f64],
    loc: Loc,
    rng: &mut SimRng,
) -> Result<Action, MapError> {
    let mask = map.valid_actions(loc)?;
    let valid: Vec<(Action, Loc)> = Action::ALL
        .iter()
        .filter(|a| mask[a.index()])
        .map(|&a| (a, map.neighbor(loc, a).expect("masked valid")))
        .collect();
    let off_station: Vec<(Action, Loc)> = valid
        .iter()
        .copied()
        .filter(|(_, l)| !map.is_station(*l))
        .collect();
    let pool = if off_station.is_empty() {
        valid
    } else {
        off_station
    };
    let best = pool
        .iter()
        .map(|(_, l)| idleness[map.index(*l)])
        .fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<Action> = pool
        .iter()
        .filter(|(_, l)| idleness[map.index(*l)] == best)
        .map(|(a, _)| *a)
        .collect();
    Ok(ties[rng.random_range(0..ties.len())])
}

/// One decision for a patrolling CR agent.
pub fn cr_action(
    map: &GridMap,
    idleness: &[f64],
    loc: Loc,
    battery: f64,
    state: &mut CrState,
    params: &CrParams,
    rng: &mut SimRng,
) -> Result<Action, MapError> {
    if battery > state.last_battery {
        state.mode = CrMode::Patrol;
    }
    state.last_battery = battery;
    if state.mode == CrMode::Patrol && battery <= cr_critical_point(map, loc, params)? {
        state.mode = CrMode::ReturnToCharge {
            path: Vec::new(),
            expected: None,
        };
    }
    match &mut state.mode {
        CrMode::Patrol => cr_patrol_action(map, idleness, loc, rng),
        CrMode::ReturnToCharge { path, expected } => {
            if *expected != Some(loc) || path.is_empty() {
                *path = map.nearest_station(loc)?.1;
                path.reverse();
            }
            match path.pop() {
                Some(a) => {
                    *expected = map.neighbor(loc, a);
                    Ok(a)
                }
                None => {
                    *expected = None;
                    cr_patrol_action(map, idleness, loc, rng)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn corridor_threshold() {
        let map = GridMap::parse("5 0 0 0 0 0 0 0 0 0 0\n").unwrap();
        let p = CrParams::default();
        let t = cr_critical_point(&map, (0, 10), &p).unwrap();
        assert!((t - (0.1 + 15.0 / 550.0)).abs() < 1e-15);
        let at_station = cr_critical_point(&map, (0, 0), &p).unwrap();
        assert!((at_station - (0.1 + 5.0 / 550.0)).abs() < 1e-15);
    }

    #[test]
    fn unique_argmax_chosen() {
        let map = GridMap::parse("0 0 0\n0 0 0\n5 0 0\n").unwrap();
        let mut idle = vec![1.0; 9];
        idle[map.index((0, 1))] = 9.0;
        idle[6] = 0.0;
        let mut rng = rng_from_seed(0);
        for _ in 0..20 {
            assert_eq!(
                cr_patrol_action(&map, &idle, (1, 1), &mut rng).unwrap(),
                Action::Up
            );
        }
    }

    #[test]
    fn returns_along_shortest_path() {
        let map = GridMap::parse("5 0 0 0 0\n").unwrap();
        let mut st = CrState::default();
        let p = CrParams::default();
        let mut rng = rng_from_seed(0);
        let idle = vec![0.0, 3.0, 3.0, 3.0, 3.0];
        let a = cr_action(&map, &idle, (0, 3), 0.05, &mut st, &p, &mut rng).unwrap();
        assert_eq!(a, Action::Left);
        assert!(matches!(st.mode, CrMode::ReturnToCharge { .. }));
        let a = cr_action(&map, &idle, (0, 2), 0.048, &mut st, &p, &mut rng).unwrap();
        assert_eq!(a, Action::Left);
        let a = cr_action(&map, &idle, (0, 0), 1.0, &mut st, &p, &mut rng).unwrap();
        assert_eq!(st.mode, CrMode::Patrol);
        assert_eq!(a, Action::Right);
    }
}
