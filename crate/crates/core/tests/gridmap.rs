#![allow(clippy::needless_range_loop)]

use patrol_core::gridmap::{CellKind, GridMap, Loc};
use proptest::prelude::*;

/// Random grid with a station in the top-left corner; obstacles are dropped
/// until every free cell is connected to it.
fn arb_map() -> impl Strategy<Value = GridMap> {
    (2usize..7, 2usize..7)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(0u8..4, r * c)))
        .prop_filter_map("disconnected", |(rows, cols, cells)| {
            let kinds = cells
                .iter()
                .enumerate()
                .map(|(i, &v)| match (i, v) {
                    (0, _) => CellKind::ChargingStation,
                    (_, 0) => CellKind::Obstacle,
                    _ => CellKind::Vertex,
                })
                .collect();
            GridMap::from_cells(rows, cols, kinds).ok()
        })
}

/// All-pairs distances by Floyd–Warshall over 4-neighbour edges.
fn floyd(map: &GridMap) -> Vec<Vec<Option<usize>>> {
    let n = map.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        let a = map.loc_of(i);
        if !map.is_free(a) {
            continue;
        }
        d[i][i] = 0;
        for j in 0..n {
            let b = map.loc_of(j);
            if map.is_free(b) && a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1 {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.into_iter()
        .map(|row| row.into_iter().map(|x| (x < inf).then_some(x)).collect())
        .collect()
}

proptest! {
    #[test]
    fn bfs_matches_floyd_warshall(map in arb_map()) {
        let d = floyd(&map);
        for i in 0..map.len() {
            let from = map.loc_of(i);
            if !map.is_free(from) {
                continue;
            }
            prop_assert_eq!(&map.distances_from(from), &d[i]);
        }
    }

    #[test]
    fn shortest_paths_replay_to_target(map in arb_map(), a in 0usize..64, b in 0usize..64) {
        let free: Vec<Loc> = map.free_cells();
        let (from, to) = (free[a % free.len()], free[b % free.len()]);
        let path = map.shortest_path(from, to).unwrap();
        prop_assert_eq!(map.replay(from, &path), Some(to));
        prop_assert_eq!(Some(path.len()), map.distances_from(from)[map.index(to)]);
    }

    #[test]
    fn masks_agree_with_neighbours(map in arb_map()) {
        for loc in map.free_cells() {
            let mask = map.valid_actions(loc).unwrap();
            for a in patrol_core::gridmap::Action::ALL {
                prop_assert_eq!(mask[a.index()], map.neighbor(loc, a).is_some());
            }
        }
    }

    #[test]
    fn text_round_trip(map in arb_map()) {
        prop_assert_eq!(GridMap::parse(&map.to_text()).unwrap(), map);
    }
}

#[test]
fn shipped_maps_load() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps");
    for name in ["fig1.map", "open6.map", "city12.map"] {
        let map = GridMap::load(root.join(name)).unwrap();
        assert!(!map.stations().is_empty(), "{name}");
    }
    let fig = GridMap::load(root.join("fig1.map")).unwrap();
    assert_eq!((fig.rows(), fig.cols(), fig.vertex_count()), (6, 6, 29));
}
