//! Static patrol-area map: cell classification, file loading, action
//! validity and breadth-first shortest paths.
//!
//! Map files are whitespace-separated integer matrices, one row per line:
//! `0` is a patrollable vertex, `-1` an obstacle and `5` a charging station.
//! Coordinates are `(row, col)` with the origin in the top-left corner.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// A map coordinate, `(row, col)`.
pub type Loc = (usize, usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("malformed map: {0}")]
    MalformedMap(String),
    #[error("map has no charging station")]
    NoStation,
    #[error("map is not connected: {0:?} unreachable from {1:?}")]
    DisconnectedMap(Loc, Loc),
    #[error("location {0:?} is an obstacle")]
    LocIsObstacle(Loc),
    #[error("location {0:?} is outside the map")]
    OutOfBounds(Loc),
    #[error("{to:?} is unreachable from {from:?}")]
    Unreachable { from: Loc, to: Loc },
    #[error("failed to read map file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Vertex,
    Obstacle,
    ChargingStation,
}

impl CellKind {
    /// Integer code used in map files and in the map observation channel.
    pub fn code(self) -> i32 {
        match self {
            CellKind::Vertex => 0,
            CellKind::Obstacle => -1,
            CellKind::ChargingStation => 5,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(CellKind::Vertex),
            -1 => Some(CellKind::Obstacle),
            5 => Some(CellKind::ChargingStation),
            _ => None,
        }
    }
}

/// Movement actions. The discriminant is the index into action masks and
/// policy outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        };
        f.write_str(s)
    }
}

/// Validity mask over [`Action::ALL`]; `true` means the move is allowed.
pub type ActionMask = [bool; 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cells: Vec<CellKind>,
    stations: Vec<Loc>,
}

impl GridMap {
    /// Parses map text and validates the station and connectivity invariants.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut rows_codes: Vec<Vec<i32>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<i32>().map_err(|_| {
                        MapError::MalformedMap(format!("line {}: bad integer {tok:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows_codes.push(row);
        }
        let Some(first) = rows_codes.first() else {
            return Err(MapError::MalformedMap("empty map".into()));
        };
        let cols = first.len();
        let mut cells = Vec::with_capacity(rows_codes.len() * cols);
        for (r, row) in rows_codes.iter().enumerate() {
            if row.len() != cols {
                return Err(MapError::MalformedMap(format!(
                    "row {r} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for &code in row {
                let kind = CellKind::from_code(code).ok_or_else(|| {
                    MapError::MalformedMap(format!("row {r}: unknown cell code {code}"))
                })?;
                cells.push(kind);
            }
        }
        Self::from_cells(rows_codes.len(), cols, cells)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| MapError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Builds a map from a row-major cell vector.
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<CellKind>) -> Result<Self, MapError> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(MapError::MalformedMap(format!(
                "{} cells do not form a {rows}x{cols} grid",
                cells.len()
            )));
        }
        let stations: Vec<Loc> = (0..rows * cols)
            .filter(|&i| cells[i] == CellKind::ChargingStation)
            .map(|i| (i / cols, i % cols))
            .collect();
        if stations.is_empty() {
            return Err(MapError::NoStation);
        }
        let map = GridMap {
            rows,
            cols,
            cells,
            stations,
        };
        map.check_connected()?;
        Ok(map)
    }

    fn check_connected(&self) -> Result<(), MapError> {
        let origin = self.stations[0];
        let dist = self.distances_from(origin);
        for idx in 0..self.cells.len() {
            if self.cells[idx] != CellKind::Obstacle && dist[idx].is_none() {
                return Err(MapError::DisconnectedMap(
                    (idx / self.cols, idx % self.cols),
                    origin,
                ));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Charging stations in row-major (lexicographic) order.
    pub fn stations(&self) -> &[Loc] {
        &self.stations
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn index(&self, loc: Loc) -> usize {
        loc.0 * self.cols + loc.1
    }

    pub fn loc_of(&self, index: usize) -> Loc {
        (index / self.cols, index % self.cols)
    }

    pub fn in_bounds(&self, loc: Loc) -> bool {
        loc.0 < self.rows && loc.1 < self.cols
    }

    pub fn kind(&self, loc: Loc) -> CellKind {
        self.cells[self.index(loc)]
    }

    pub fn is_free(&self, loc: Loc) -> bool {
        self.in_bounds(loc) && self.kind(loc) != CellKind::Obstacle
    }

    pub fn is_station(&self, loc: Loc) -> bool {
        self.in_bounds(loc) && self.kind(loc) == CellKind::ChargingStation
    }

    /// All non-obstacle cells in row-major order.
    pub fn free_cells(&self) -> Vec<Loc> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] != CellKind::Obstacle)
            .map(|i| self.loc_of(i))
            .collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|&&c| c == CellKind::Vertex)
            .count()
    }

    /// The cell reached by `action` from `loc`, or `None` when it leaves the
    /// grid or enters an obstacle.
    pub fn neighbor(&self, loc: Loc, action: Action) -> Option<Loc> {
        let (dr, dc) = action.delta();
        let r = loc.0.checked_add_signed(dr)?;
        let c = loc.1.checked_add_signed(dc)?;
        let next = (r, c);
        self.is_free(next).then_some(next)
    }

    fn check_free(&self, loc: Loc) -> Result<(), MapError> {
        if !self.in_bounds(loc) {
            Err(MapError::OutOfBounds(loc))
        } else if self.kind(loc) == CellKind::Obstacle {
            Err(MapError::LocIsObstacle(loc))
        } else {
            Ok(())
        }
    }

    pub fn valid_actions(&self, loc: Loc) -> Result<ActionMask, MapError> {
        self.check_free(loc)?;
        Ok(Action::ALL.map(|a| self.neighbor(loc, a).is_some()))
    }

    /// BFS distances (in moves) from `origin` to every cell; `None` for
    /// obstacles and unreachable cells.
    pub fn distances_from(&self, origin: Loc) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells.len()];
        if !self.is_free(origin) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(origin)] = Some(0);
        queue.push_back(origin);
        while let Some(cur) = queue.pop_front() {
            let d = dist[self.index(cur)].unwrap_or(0);
            for a in Action::ALL {
                if let Some(next) = self.neighbor(cur, a) {
                    let slot = &mut dist[self.index(next)];
                    if slot.is_none() {
                        *slot = Some(d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
        dist
    }

    /// A minimum-length action sequence from `from` to `to`. Neighbours are
    /// expanded in `Up, Down, Left, Right` order, so the result is
    /// deterministic.
    pub fn shortest_path(&self, from: Loc, to: Loc) -> Result<Vec<Action>, MapError> {
        self.check_free(from)?;
        self.check_free(to)?;
        if from == to {
            return Ok(Vec::new());
        }
        let n = self.cells.len();
        let mut parent: Vec<Option<(usize, Action)>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[self.index(from)] = true;
        queue.push_back(from);
        let target = self.index(to);
        while let Some(cur) = queue.pop_front() {
            for a in Action::ALL {
                let Some(next) = self.neighbor(cur, a) else {
                    continue;
                };
                let ni = self.index(next);
                if seen[ni] {
                    continue;
                }
                seen[ni] = true;
                parent[ni] = Some((self.index(cur), a));
                if ni == target {
                    let mut path = Vec::new();
                    let mut at = ni;
                    while let Some((prev, act)) = parent[at] {
                        path.push(act);
                        at = prev;
                    }
                    path.reverse();
                    return Ok(path);
                }
                queue.push_back(next);
            }
        }
        Err(MapError::Unreachable { from, to })
    }

    /// The station with the shortest path from `loc` (ties go to the
    /// lexicographically smallest station) together with that path.
    pub fn nearest_station(&self, loc: Loc) -> Result<(Loc, Vec<Action>), MapError> {
        self.check_free(loc)?;
        let dist = self.distances_from(loc);
        let best = self
            .stations
            .iter()
            .filter_map(|&s| dist[self.index(s)].map(|d| (d, s)))
            .min()
            .ok_or(MapError::Unreachable {
                from: loc,
                to: self.stations[0],
            })?;
        let path = self.shortest_path(loc, best.1)?;
        Ok((best.1, path))
    }

    /// Shortest-path length from `loc` to its nearest station.
    pub fn station_distance(&self, loc: Loc) -> Result<usize, MapError> {
        self.check_free(loc)?;
        let dist = self.distances_from(loc);
        self.stations
            .iter()
            .filter_map(|&s| dist[self.index(s)])
            .min()
            .ok_or(MapError::Unreachable {
                from: loc,
                to: self.stations[0],
            })
    }

    /// Applies `actions` from `from`, returning the final cell, or `None` if
    /// any move is invalid.
    pub fn replay(&self, from: Loc, actions: &[Action]) -> Option<Loc> {
        actions
            .iter()
            .try_fold(from, |loc, &a| self.neighbor(loc, a))
    }

    /// Renders the map in file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|c| format!("{:>2}", self.kind((r, c)).code()))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG1: &str = "\
 0  0  0  0  0  0
 0 -1  0 -1  0  0
 0 -1  0 -1  0  0
 0  0  0  0 -1  0
 5  0 -1  0  0  0
 0  0  0  0  0  0
";

    fn open3x3() -> GridMap {
        GridMap::parse("0 0 0\n0 5 0\n0 0 0\n").unwrap()
    }

    #[test]
    fn parses_example_matrix() {
        let map = GridMap::parse(FIG1).unwrap();
        assert_eq!((map.rows(), map.cols()), (6, 6));
        assert_eq!(map.stations(), &[(4, 0)]);
        assert_eq!(map.kind((1, 1)), CellKind::Obstacle);
        assert_eq!(map.vertex_count(), 29);
    }

    #[test]
    fn single_vertex_has_no_station() {
        assert_eq!(GridMap::parse("0"), Err(MapError::NoStation));
    }

    #[test]
    fn open_map_counts() {
        let map = open3x3();
        assert_eq!(map.vertex_count(), 8);
        assert_eq!(map.stations().len(), 1);
        assert_eq!(map.free_cells().len(), 9);
    }

    #[test]
    fn rejects_ragged_and_unknown() {
        assert!(matches!(
            GridMap::parse("0 0\n0\n5 0"),
            Err(MapError::MalformedMap(_))
        ));
        assert!(matches!(
            GridMap::parse("0 3\n5 0"),
            Err(MapError::MalformedMap(_))
        ));
        assert!(matches!(GridMap::parse(""), Err(MapError::MalformedMap(_))));
    }

    #[test]
    fn rejects_disconnected() {
        let err = GridMap::parse("5 -1 0\n0 -1 0\n").unwrap_err();
        assert!(matches!(err, MapError::DisconnectedMap(..)));
    }

    #[test]
    fn corridor_mask() {
        let map = GridMap::parse(FIG1).unwrap();
        assert_eq!(
            map.valid_actions((1, 2)).unwrap(),
            [true, true, false, false]
        );
    }

    #[test]
    fn open_center_and_corner_masks() {
        let map = open3x3();
        assert_eq!(map.valid_actions((1, 1)).unwrap(), [true; 4]);
        let corner = map.valid_actions((0, 0)).unwrap();
        assert_eq!(corner.iter().filter(|&&v| v).count(), 2);
        assert_eq!(map.valid_actions((1, 1)).unwrap(), [true; 4]);
    }

    #[test]
    fn mask_on_obstacle_is_error() {
        let map = GridMap::parse(FIG1).unwrap();
        assert_eq!(
            map.valid_actions((1, 1)),
            Err(MapError::LocIsObstacle((1, 1)))
        );
    }

    #[test]
    fn path_identity_and_corridor() {
        let map = GridMap::parse("5 0 0 0 0").unwrap();
        assert!(map.shortest_path((0, 2), (0, 2)).unwrap().is_empty());
        let path = map.shortest_path((0, 0), (0, 4)).unwrap();
        assert_eq!(path, vec![Action::Right; 4]);
    }

    #[test]
    fn nearest_station_cases() {
        let map = GridMap::parse(FIG1).unwrap();
        let (s, p) = map.nearest_station((4, 0)).unwrap();
        assert_eq!(s, (4, 0));
        assert!(p.is_empty());
        for loc in map.free_cells() {
            assert_eq!(map.nearest_station(loc).unwrap().0, (4, 0));
        }
    }

    #[test]
    fn equidistant_stations_pick_lexicographic_first() {
        // (0,0) and (2,2) are both two moves from (1,1) and (0,2)/(2,0).
        let map = GridMap::parse("5 0 0\n0 0 0\n0 0 5\n").unwrap();
        let dist = map.distances_from((1, 1));
        assert_eq!(dist[map.index((0, 0))], Some(2));
        assert_eq!(dist[map.index((2, 2))], Some(2));
        assert_eq!(map.nearest_station((1, 1)).unwrap().0, (0, 0));
        assert_eq!(map.nearest_station((0, 2)).unwrap().0, (0, 0));
        assert_eq!(map.nearest_station((2, 1)).unwrap().0, (2, 2));
    }

    #[test]
    fn text_round_trip() {
        let map = GridMap::parse(FIG1).unwrap();
        assert_eq!(GridMap::parse(&map.to_text()).unwrap(), map);
    }
}
