//! Energy-aware multi-agent grid patrolling: simulator, reward shaping,
//! a small autodiff engine, MAPPO training and baseline strategies.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::same_item_push
)]

pub mod autodiff;
pub mod baselines;
pub mod docs;
pub mod environment;
pub mod gridmap;
pub mod harness;
pub mod mappo;
pub mod metrics;
pub mod policy;
pub mod rewards;
pub mod seed;

pub use baselines::{CrParams, CrState};
pub use environment::{
    AgentId, AgentState, AgentStatus, EnvConfig, EnvError, EnvState, IdlenessState, StepOutcome,
};
pub use gridmap::{Action, ActionMask, CellKind, GridMap, Loc, MapError};
pub use harness::{ExperimentConfig, HarnessError, RunManifest, Strategy};
pub use mappo::{MappoError, TrainConfig, Trajectory, TransitionRecord};
pub use metrics::{BatteryStats, EpisodeTrace, FaultSchedule, MetricsError, PatrolSummary};
pub use policy::{ActorObservation, CriticObservation, PolicyArch, PolicyError, PolicySet};
pub use rewards::{RewardBreakdown, RewardError, RewardParams};
