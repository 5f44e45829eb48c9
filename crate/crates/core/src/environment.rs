//! Discrete-time patrolling world.
//!
//! One call to [`EnvState::step`] moves every patrolling agent once, applies
//! the stochastic dynamics (movement perturbation, step-duration jitter,
//! extra battery drain), advances idleness, starts hot-swaps for agents that
//! deliberately landed on a charging station and completes swaps whose
//! preparation time has elapsed. Rewards are computed elsewhere from the
//! returned [`StepOutcome`].

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{Action, CellKind, GridMap, Loc};
use crate::policy::{ActorObservation, CriticObservation};
use crate::rewards::normalize_idleness;
use crate::seed::{rng_from_seed, SimRng};

/// Battery levels at or below this are treated as empty.
pub const BATTERY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("requested {requested} agents but capacity is {capacity}")]
    TooManyAgents { requested: usize, capacity: usize },
    #[error("{id} submitted masked action {action}")]
    InvalidAction { id: AgentId, action: Action },
    #[error("no action supplied for {0}")]
    MissingAction(AgentId),
    #[error("{0} cannot act this step")]
    UnexpectedAction(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("{0} has already failed")]
    AlreadyFailed(AgentId),
    #[error("agent capacity {0} reached")]
    CapacityExceeded(usize),
    #[error("{0} is not available for observation")]
    AgentUnavailable(AgentId),
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Battery capacity in timesteps of ideal flight.
    pub b_max: f64,
    /// Inclusive hot-swap duration range, in steps.
    pub b_swap: [u32; 2],
    /// Inclusive range from which each agent's per-step perturbation
    /// probability is drawn.
    pub p_dyn: [f64; 2],
    /// Maximum fractional extra drain per step.
    pub drain_extra_max: f64,
    /// Maximum fractional +/- variation of the step duration.
    pub idle_jitter: f64,
    /// Battery fraction agents should keep when they land to recharge.
    pub b_l: f64,
    pub max_agents: usize,
    /// Finite stand-in for "never visited" idleness, in timesteps.
    pub idle_cap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            b_max: 550.0,
            b_swap: [80, 150],
            p_dyn: [0.0, 0.05],
            drain_extra_max: 0.05,
            idle_jitter: 0.05,
            b_l: 0.1,
            max_agents: 5,
            idle_cap: 1500.0,
        }
    }
}

impl EnvConfig {
    /// Same configuration with every stochastic range collapsed.
    pub fn deterministic(mut self) -> Self {
        self.p_dyn = [0.0, 0.0];
        self.drain_extra_max = 0.0;
        self.idle_jitter = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !(self.b_max > 0.0) {
            return bad("b_max must be positive");
        }
        if self.b_swap[0] == 0 || self.b_swap[0] > self.b_swap[1] {
            return bad("b_swap must be a positive, ordered range");
        }
        if !(0.0..=1.0).contains(&self.p_dyn[0])
            || !(0.0..=1.0).contains(&self.p_dyn[1])
            || self.p_dyn[0] > self.p_dyn[1]
        {
            return bad("p_dyn must be an ordered range within [0, 1]");
        }
        if !(self.drain_extra_max >= 0.0) {
            return bad("drain_extra_max must be non-negative");
        }
        if !(0.0..1.0).contains(&self.idle_jitter) {
            return bad("idle_jitter must lie in [0, 1)");
        }
        if !(self.b_l > 0.0 && self.b_l < 1.0) {
            return bad("b_l must lie in (0, 1)");
        }
        if self.max_agents == 0 {
            return bad("max_agents must be at least 1");
        }
        if !(self.idle_cap > 0.0) {
            return bad("idle_cap must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentStatus {
    Patrolling,
    Swapping { remaining: u32 },
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub loc: Loc,
    /// Remaining battery as a fraction of `b_max`.
    pub battery: f64,
    pub status: AgentStatus,
}

impl AgentState {
    pub fn is_patrolling(&self) -> bool {
        self.status == AgentStatus::Patrolling
    }

    pub fn is_failed(&self) -> bool {
        self.status == AgentStatus::Failed
    }
}

/// Per-cell time since last visit. Obstacles hold `-1`, stations `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdlenessState {
    values: Vec<f64>,
    cap: f64,
}

impl IdlenessState {
    pub fn new(map: &GridMap, initial: f64, cap: f64) -> Self {
        let values = map
            .cells()
            .iter()
            .map(|c| match c {
                CellKind::Vertex => initial.min(cap),
                CellKind::Obstacle => -1.0,
                CellKind::ChargingStation => 0.0,
            })
            .collect();
        IdlenessState { values, cap }
    }

    /// Wraps raw values; callers are responsible for the pinned cells.
    pub fn from_values(values: Vec<f64>, cap: f64) -> Self {
        IdlenessState { values, cap }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn get(&self, map: &GridMap, loc: Loc) -> f64 {
        self.values[map.index(loc)]
    }

    /// Mean and max over vertex cells, in raw timesteps.
    pub fn vertex_mean_max(&self, map: &GridMap) -> (f64, f64) {
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        let mut n = 0usize;
        for (v, c) in self.values.iter().zip(map.cells()) {
            if *c == CellKind::Vertex {
                sum += v;
                max = max.max(*v);
                n += 1;
            }
        }
        if n == 0 {
            (0.0, 0.0)
        } else {
            (sum / n as f64, max)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMove {
    pub id: AgentId,
    pub from: Loc,
    pub to: Loc,
    pub perturbed: bool,
    /// Battery fraction after this step's drain.
    pub battery: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Timesteps elapsed this step.
    pub duration: f64,
    /// One entry per agent that acted, in id order.
    pub moves: Vec<AgentMove>,
    /// Agents that landed on a station by their own action, with the battery
    /// left at landing.
    pub intentional_recharges: Vec<(AgentId, f64)>,
    pub battery_failures: Vec<AgentId>,
    pub perturbed: Vec<AgentId>,
    /// Agents whose hot-swap completed this step.
    pub redeployed: Vec<AgentId>,
    /// Idleness after the per-step increase and before visited cells reset.
    pub pre_reset_idleness: Vec<f64>,
}

impl StepOutcome {
    pub fn recharged(&self, id: AgentId) -> bool {
        self.intentional_recharges.iter().any(|(a, _)| *a == id)
    }

    pub fn failed(&self, id: AgentId) -> bool {
        self.battery_failures.contains(&id)
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    map: Arc<GridMap>,
    config: EnvConfig,
    idleness: IdlenessState,
    agents: Vec<AgentState>,
    time: u64,
    elapsed: f64,
    rng: SimRng,
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

impl EnvState {
    /// Places `n_agents` uniformly at random on non-obstacle cells with
    /// batteries uniform in `[b_l, 1]`.
    pub fn reset(
        map: Arc<GridMap>,
        config: EnvConfig,
        n_agents: usize,
        seed: u64,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        if n_agents > config.max_agents {
            return Err(EnvError::TooManyAgents {
                requested: n_agents,
                capacity: config.max_agents,
            });
        }
        let mut rng = rng_from_seed(seed);
        let free = map.free_cells();
        let agents = (0..n_agents)
            .map(|i| {
                let loc = free[rng.random_range(0..free.len())];
                let battery = uniform(&mut rng, config.b_l, 1.0);
                AgentState {
                    id: AgentId(i),
                    loc,
                    battery,
                    status: AgentStatus::Patrolling,
                }
            })
            .collect();
        let idleness = IdlenessState::new(&map, config.idle_cap, config.idle_cap);
        Ok(EnvState {
            map,
            config,
            idleness,
            agents,
            time: 0,
            elapsed: 0.0,
            rng,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn shared_map(&self) -> Arc<GridMap> {
        Arc::clone(&self.map)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn idleness(&self) -> &IdlenessState {
        &self.idleness
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Steps taken since reset.
    pub fn time(&self) -> u64 {
        self.time
    }

    /// Sum of step durations since reset.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Agents that must submit an action this step, in id order.
    pub fn acting_agents(&self) -> Vec<AgentId> {
        self.agents
            .iter()
            .filter(|a| a.is_patrolling())
            .map(|a| a.id)
            .collect()
    }

    /// Non-failed agents (patrolling or swapping).
    pub fn live_count(&self) -> usize {
        self.agents.iter().filter(|a| !a.is_failed()).count()
    }

    /// Overrides an agent's battery; used by scripted scenarios and tests.
    pub fn set_battery(&mut self, id: AgentId, battery: f64) -> Result<(), EnvError> {
        let agent = self
            .agents
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or(EnvError::UnknownAgent(id))?;
        agent.battery = battery.clamp(0.0, 1.0);
        Ok(())
    }

    /// Moves an agent; used by scripted scenarios and tests.
    pub fn set_location(&mut self, id: AgentId, loc: Loc) -> Result<(), EnvError> {
        if !self.map.is_free(loc) {
            return Err(EnvError::InvalidConfig(format!(
                "{loc:?} is not a free cell"
            )));
        }
        let agent = self
            .agents
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or(EnvError::UnknownAgent(id))?;
        agent.loc = loc;
        Ok(())
    }

    /// Replaces the idleness matrix; pinned cells are re-pinned.
    pub fn set_idleness(&mut self, values: Vec<f64>) {
        let cap = self.config.idle_cap;
        let pinned = values
            .into_iter()
            .zip(self.map.cells())
            .map(|(v, c)| match c {
                CellKind::Vertex => v.clamp(0.0, cap),
                CellKind::Obstacle => -1.0,
                CellKind::ChargingStation => 0.0,
            })
            .collect();
        self.idleness = IdlenessState::from_values(pinned, cap);
    }

    fn validate_actions(
        &self,
        actions: &[(AgentId, Action)],
    ) -> Result<Vec<(usize, Action)>, EnvError> {
        let mut out = Vec::with_capacity(actions.len());
        for (idx, agent) in self.agents.iter().enumerate() {
            if !agent.is_patrolling() {
                continue;
            }
            let mut found = actions.iter().filter(|(id, _)| *id == agent.id);
            let &(_, action) = found.next().ok_or(EnvError::MissingAction(agent.id))?;
            if found.next().is_some() {
                return Err(EnvError::UnexpectedAction(agent.id));
            }
            if self.map.neighbor(agent.loc, action).is_none() {
                return Err(EnvError::InvalidAction {
                    id: agent.id,
                    action,
                });
            }
            out.push((idx, action));
        }
        if let Some((id, _)) = actions
            .iter()
            .find(|(id, _)| !self.agent(*id).is_some_and(|a| a.is_patrolling()))
        {
            return Err(if self.agent(*id).is_none() {
                EnvError::UnknownAgent(*id)
            } else {
                EnvError::UnexpectedAction(*id)
            });
        }
        Ok(out)
    }

    /// Advances the world by one step. `actions` must hold exactly one valid
    /// action for every patrolling agent.
    pub fn step(&mut self, actions: &[(AgentId, Action)]) -> Result<StepOutcome, EnvError> {
        let planned = self.validate_actions(actions)?;
        let cfg = self.config.clone();
        let jitter = uniform(&mut self.rng, -cfg.idle_jitter, cfg.idle_jitter);
        let duration = 1.0 + jitter;

        let mut moves = Vec::with_capacity(planned.len());
        let mut perturbed = Vec::new();
        for &(idx, action) in &planned {
            let from = self.agents[idx].loc;
            let p = uniform(&mut self.rng, cfg.p_dyn[0], cfg.p_dyn[1]);
            let roll: f64 = self.rng.random();
            let is_perturbed = roll < p;
            let to = if is_perturbed {
                let mut options: Vec<Loc> = Action::ALL
                    .iter()
                    .filter_map(|&a| self.map.neighbor(from, a))
                    .collect();
                options.push(from);
                options[self.rng.random_range(0..options.len())]
            } else {
                self.map
                    .neighbor(from, action)
                    .expect("validated action has a neighbour")
            };
            let extra = uniform(&mut self.rng, 0.0, cfg.drain_extra_max);
            let agent = &mut self.agents[idx];
            agent.loc = to;
            agent.battery = (agent.battery - duration * (1.0 + extra) / cfg.b_max).max(0.0);
            if is_perturbed {
                perturbed.push(agent.id);
            }
            moves.push(AgentMove {
                id: agent.id,
                from,
                to,
                perturbed: is_perturbed,
                battery: agent.battery,
            });
        }

        let mut redeployed = Vec::new();
        for agent in &mut self.agents {
            if let AgentStatus::Swapping { remaining } = agent.status {
                if remaining <= 1 {
                    agent.status = AgentStatus::Patrolling;
                    agent.battery = 1.0;
                    redeployed.push(agent.id);
                } else {
                    agent.status = AgentStatus::Swapping {
                        remaining: remaining - 1,
                    };
                }
            }
        }

        let cap = cfg.idle_cap;
        for (v, c) in self.idleness.values.iter_mut().zip(self.map.cells()) {
            if *c == CellKind::Vertex {
                *v = (*v + duration).min(cap);
            }
        }
        let pre_reset_idleness = self.idleness.values.clone();

        let mut battery_failures = Vec::new();
        let mut intentional_recharges = Vec::new();
        for m in &moves {
            let idx = self
                .agents
                .iter()
                .position(|a| a.id == m.id)
                .expect("moved agent exists");
            if m.battery <= BATTERY_EPS {
                let agent = &mut self.agents[idx];
                agent.battery = 0.0;
                agent.status = AgentStatus::Failed;
                battery_failures.push(m.id);
            } else if !m.perturbed && self.map.is_station(m.to) {
                let lo = cfg.b_swap[0];
                let hi = cfg.b_swap[1];
                let remaining = self.rng.random_range(lo..=hi);
                self.agents[idx].status = AgentStatus::Swapping { remaining };
                intentional_recharges.push((m.id, m.battery));
            }
        }

        for agent in &self.agents {
            if !agent.is_failed() {
                let i = self.map.index(agent.loc);
                if self.map.cells()[i] == CellKind::Vertex {
                    self.idleness.values[i] = 0.0;
                }
            }
        }

        self.time += 1;
        self.elapsed += duration;
        Ok(StepOutcome {
            duration,
            moves,
            intentional_recharges,
            battery_failures,
            perturbed,
            redeployed,
            pre_reset_idleness,
        })
    }

    pub fn fail_agent(&mut self, id: AgentId) -> Result<(), EnvError> {
        let agent = self
            .agents
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or(EnvError::UnknownAgent(id))?;
        if agent.is_failed() {
            return Err(EnvError::AlreadyFailed(id));
        }
        agent.status = AgentStatus::Failed;
        Ok(())
    }

    /// Deploys a fully charged agent at the first charging station.
    pub fn add_agent(&mut self) -> Result<AgentId, EnvError> {
        if self.live_count() >= self.config.max_agents {
            return Err(EnvError::CapacityExceeded(self.config.max_agents));
        }
        let id = AgentId(self.agents.iter().map(|a| a.id.0 + 1).max().unwrap_or(0));
        self.agents.push(AgentState {
            id,
            loc: self.map.stations()[0],
            battery: 1.0,
            status: AgentStatus::Patrolling,
        });
        Ok(id)
    }

    fn map_channel(&self) -> Vec<f64> {
        self.map.cells().iter().map(|c| c.code() as f64).collect()
    }

    /// Normalised idleness with every patrolling agent's cell set to zero.
    fn shared_idleness(&self, c_norm: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .idleness
            .values
            .iter()
            .zip(self.map.cells())
            .map(|(&v, c)| match c {
                CellKind::Vertex => normalize_idleness(v.max(0.0), c_norm).unwrap_or(0.0),
                CellKind::Obstacle => -1.0,
                CellKind::ChargingStation => 0.0,
            })
            .collect();
        for a in self.agents.iter().filter(|a| a.is_patrolling()) {
            let i = self.map.index(a.loc);
            if out[i] > 0.0 {
                out[i] = 0.0;
            }
        }
        out
    }

    pub fn normalized_location(&self, loc: Loc) -> [f64; 2] {
        let scale = |v: usize, n: usize| {
            if n > 1 {
                v as f64 / (n - 1) as f64
            } else {
                0.0
            }
        };
        [scale(loc.0, self.map.rows()), scale(loc.1, self.map.cols())]
    }

    /// Local observation for a patrolling agent. Cells occupied by other
    /// agents (and its own) appear with zero idleness.
    pub fn observe_actor(&self, id: AgentId, c_norm: f64) -> Result<ActorObservation, EnvError> {
        let agent = self.agent(id).ok_or(EnvError::UnknownAgent(id))?;
        if !agent.is_patrolling() {
            return Err(EnvError::AgentUnavailable(id));
        }
        let mask = self
            .map
            .valid_actions(agent.loc)
            .map_err(|_| EnvError::AgentUnavailable(id))?;
        Ok(ActorObservation {
            rows: self.map.rows(),
            cols: self.map.cols(),
            map: self.map_channel(),
            idleness: self.shared_idleness(c_norm),
            battery: agent.battery,
            location: self.normalized_location(agent.loc),
            mask,
        })
    }

    /// Global observation for the critic, padded to `slots` agents. Vacant
    /// slots hold battery 1 and the first station's location.
    pub fn observe_critic(&self, slots: usize, c_norm: f64) -> Result<CriticObservation, EnvError> {
        let active: Vec<&AgentState> = self.agents.iter().filter(|a| a.is_patrolling()).collect();
        if active.len() > slots {
            return Err(EnvError::TooManyAgents {
                requested: active.len(),
                capacity: slots,
            });
        }
        let station = self.normalized_location(self.map.stations()[0]);
        let mut batteries = Vec::with_capacity(slots);
        let mut locations = Vec::with_capacity(2 * slots);
        for a in &active {
            batteries.push(a.battery);
            locations.extend_from_slice(&self.normalized_location(a.loc));
        }
        for _ in active.len()..slots {
            batteries.push(1.0);
            locations.extend_from_slice(&station);
        }
        Ok(CriticObservation {
            rows: self.map.rows(),
            cols: self.map.cols(),
            map: self.map_channel(),
            idleness: self.shared_idleness(c_norm),
            batteries,
            locations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = "\
 0  0  0  0  0  0
 0 -1  0 -1  0  0
 0 -1  0 -1  0  0
 0  0  0  0 -1  0
 5  0 -1  0  0  0
 0  0  0  0  0  0
";

    fn fig1() -> Arc<GridMap> {
        Arc::new(GridMap::parse(FIG1).unwrap())
    }

    fn open3() -> Arc<GridMap> {
        Arc::new(GridMap::parse("0 0 0\n0 5 0\n0 0 0\n").unwrap())
    }

    fn calm() -> EnvConfig {
        EnvConfig::default().deterministic()
    }

    fn first_valid(state: &EnvState, id: AgentId) -> Action {
        let loc = state.agent(id).unwrap().loc;
        let mask = state.map().valid_actions(loc).unwrap();
        Action::ALL[mask.iter().position(|&m| m).unwrap()]
    }

    #[test]
    fn reset_single_agent() {
        let cfg = calm();
        let s = EnvState::reset(open3(), cfg.clone(), 1, 3).unwrap();
        let a = &s.agents()[0];
        assert!(s.map().is_free(a.loc));
        assert!(a.battery >= cfg.b_l && a.battery <= 1.0);
        assert_eq!(a.status, AgentStatus::Patrolling);
        assert_eq!(s.idleness().get(s.map(), (1, 1)), 0.0);
        assert_eq!(s.idleness().get(s.map(), (0, 0)), cfg.idle_cap);
        assert_eq!(s.time(), 0);
    }

    #[test]
    fn reset_is_seeded() {
        let a = EnvState::reset(fig1(), EnvConfig::default(), 4, 11).unwrap();
        let b = EnvState::reset(fig1(), EnvConfig::default(), 4, 11).unwrap();
        assert_eq!(a.agents(), b.agents());
        assert_eq!(a.idleness(), b.idleness());
    }

    #[test]
    fn reset_rejects_too_many() {
        let err = EnvState::reset(fig1(), calm(), 6, 0).unwrap_err();
        assert_eq!(
            err,
            EnvError::TooManyAgents {
                requested: 6,
                capacity: 5
            }
        );
    }

    #[test]
    fn deterministic_step_drains_exactly() {
        let mut s = EnvState::reset(fig1(), calm(), 1, 5).unwrap();
        s.set_location(AgentId(0), (0, 0)).unwrap();
        s.set_battery(AgentId(0), 1.0).unwrap();
        let out = s.step(&[(AgentId(0), Action::Right)]).unwrap();
        assert_eq!(out.duration, 1.0);
        assert_eq!(s.agents()[0].battery, 1.0 - 1.0 / 550.0);
        assert_eq!(s.agents()[0].loc, (0, 1));
    }

    #[test]
    fn visiting_resets_and_obstacles_stay_pinned() {
        let mut s = EnvState::reset(fig1(), calm(), 1, 5).unwrap();
        s.set_location(AgentId(0), (0, 0)).unwrap();
        let out = s.step(&[(AgentId(0), Action::Right)]).unwrap();
        assert_eq!(s.idleness().get(s.map(), (0, 1)), 0.0);
        assert_eq!(out.pre_reset_idleness[s.map().index((0, 1))], 1500.0);
        assert_eq!(s.idleness().get(s.map(), (1, 1)), -1.0);
        assert_eq!(s.idleness().get(s.map(), (4, 0)), 0.0);
    }

    #[test]
    fn intentional_landing_starts_swap_and_redeploys() {
        let mut cfg = calm();
        cfg.b_swap = [3, 3];
        let mut s = EnvState::reset(fig1(), cfg, 1, 5).unwrap();
        s.set_location(AgentId(0), (3, 0)).unwrap();
        s.set_battery(AgentId(0), 0.5).unwrap();
        let out = s.step(&[(AgentId(0), Action::Down)]).unwrap();
        assert_eq!(out.intentional_recharges.len(), 1);
        assert_eq!(s.agents()[0].status, AgentStatus::Swapping { remaining: 3 });
        assert!(s.acting_agents().is_empty());
        s.step(&[]).unwrap();
        s.step(&[]).unwrap();
        let out = s.step(&[]).unwrap();
        assert_eq!(out.redeployed, vec![AgentId(0)]);
        let a = &s.agents()[0];
        assert_eq!(
            (a.status, a.battery, a.loc),
            (AgentStatus::Patrolling, 1.0, (4, 0))
        );
    }

    #[test]
    fn battery_exhaustion_fails_agent() {
        let mut s = EnvState::reset(fig1(), calm(), 1, 5).unwrap();
        s.set_location(AgentId(0), (0, 0)).unwrap();
        s.set_battery(AgentId(0), 1.0 / 550.0).unwrap();
        let out = s.step(&[(AgentId(0), Action::Right)]).unwrap();
        assert_eq!(out.battery_failures, vec![AgentId(0)]);
        assert!(s.agents()[0].is_failed());
        assert_eq!(s.idleness().get(s.map(), (0, 1)), 1500.0);
    }

    #[test]
    fn action_validation() {
        let mut s = EnvState::reset(fig1(), calm(), 2, 5).unwrap();
        s.set_location(AgentId(0), (1, 2)).unwrap();
        s.set_location(AgentId(1), (0, 0)).unwrap();
        assert_eq!(
            s.step(&[(AgentId(0), Action::Up)]).unwrap_err(),
            EnvError::MissingAction(AgentId(1))
        );
        assert_eq!(
            s.step(&[(AgentId(0), Action::Left), (AgentId(1), Action::Right)])
                .unwrap_err(),
            EnvError::InvalidAction {
                id: AgentId(0),
                action: Action::Left
            }
        );
        assert_eq!(
            s.step(&[
                (AgentId(0), Action::Up),
                (AgentId(1), Action::Right),
                (AgentId(7), Action::Up)
            ])
            .unwrap_err(),
            EnvError::UnknownAgent(AgentId(7))
        );
    }

    #[test]
    fn fail_and_add_agents() {
        let mut cfg = calm();
        cfg.max_agents = 3;
        let mut s = EnvState::reset(fig1(), cfg, 3, 9).unwrap();
        s.fail_agent(AgentId(1)).unwrap();
        assert_eq!(
            s.fail_agent(AgentId(1)),
            Err(EnvError::AlreadyFailed(AgentId(1)))
        );
        assert_eq!(
            s.fail_agent(AgentId(9)),
            Err(EnvError::UnknownAgent(AgentId(9)))
        );
        let critic = s.observe_critic(3, 150.0).unwrap();
        assert!(critic.batteries.contains(&1.0));
        assert_eq!(s.acting_agents(), vec![AgentId(0), AgentId(2)]);
        let id = s.add_agent().unwrap();
        assert_eq!(id, AgentId(3));
        assert_eq!(s.agent(id).unwrap().loc, (4, 0));
        assert_eq!(s.add_agent(), Err(EnvError::CapacityExceeded(3)));
    }

    #[test]
    fn empty_system_keeps_stepping() {
        let mut s = EnvState::reset(fig1(), calm(), 1, 2).unwrap();
        s.fail_agent(AgentId(0)).unwrap();
        let mut prev = s.idleness().vertex_mean_max(s.map()).0;
        s.set_idleness(vec![0.0; 36]);
        for _ in 0..5 {
            s.step(&[]).unwrap();
            let now = s.idleness().vertex_mean_max(s.map()).0;
            assert!(now > prev || prev == 1500.0);
            prev = now;
        }
        assert_eq!(prev, 5.0);
    }

    #[test]
    fn add_after_total_failure_resumes_patrol() {
        let mut s = EnvState::reset(fig1(), calm(), 1, 2).unwrap();
        s.fail_agent(AgentId(0)).unwrap();
        s.step(&[]).unwrap();
        let id = s.add_agent().unwrap();
        let a = first_valid(&s, id);
        let target = s.map().neighbor((4, 0), a).unwrap();
        s.step(&[(id, a)]).unwrap();
        assert_eq!(s.idleness().get(s.map(), target), 0.0);
    }

    #[test]
    fn actor_observation_zeroes_occupied_cells() {
        let mut s = EnvState::reset(fig1(), calm(), 2, 2).unwrap();
        s.set_location(AgentId(0), (0, 0)).unwrap();
        s.set_location(AgentId(1), (0, 0)).unwrap();
        let obs = s.observe_actor(AgentId(0), 150.0).unwrap();
        assert_eq!(obs.idleness[0], 0.0);
        assert_eq!(obs.idleness.iter().filter(|&&v| v == 0.0).count(), 2);
        assert_eq!(obs.idleness[s.map().index((1, 1))], -1.0);
        s.set_location(AgentId(0), (1, 2)).unwrap();
        let obs = s.observe_actor(AgentId(0), 150.0).unwrap();
        assert_eq!(obs.mask, s.map().valid_actions((1, 2)).unwrap());
        assert_eq!(obs.location, [0.2, 0.4]);
    }

    #[test]
    fn critic_padding() {
        let s = EnvState::reset(fig1(), calm(), 2, 2).unwrap();
        let obs = s.observe_critic(5, 150.0).unwrap();
        assert_eq!(obs.batteries.len(), 5);
        assert_eq!(&obs.batteries[2..], &[1.0, 1.0, 1.0]);
        assert_eq!(obs.locations.len(), 10);
        assert_eq!(&obs.locations[4..6], &[0.8, 0.0]);
        let full = EnvState::reset(fig1(), calm(), 5, 2).unwrap();
        let obs = full.observe_critic(5, 150.0).unwrap();
        assert_eq!(obs.batteries.len(), 5);
        assert!(obs.batteries.iter().all(|&b| b <= 1.0));
    }
}
