//! Multi-agent PPO with a shared actor and a centralised critic.
//!
//! A training round collects several episodes with a frozen policy snapshot,
//! fills hot-swap gaps in each agent's trajectory from agents that were
//! still flying, computes GAE advantages and averaged critic targets, then
//! runs clipped PPO epochs.

mod collect;
mod gae;
mod train;
mod trajectory;
mod update;

use thiserror::Error;

pub use collect::{collect_episode, collect_round, EpisodeData, EpisodeRequest};
pub use gae::{compute_gae, compute_v_targ_prime, discounted_returns, CriticTarget};
pub use train::{train, EpisodeSpec, RoundLog, TrainConfig, Trainer};
pub use trajectory::{reconstruct_swap_gaps, Trajectory, TransitionRecord};
pub use update::{
    actor_loss, actor_step, clipped_surrogate, critic_step, normalize_advantages, ppo_update,
    ActorLoss, ActorSample, CriticSample, LossReport, UpdateParams,
};

use crate::autodiff::AutodiffError;
use crate::environment::EnvError;
use crate::policy::PolicyError;
use crate::rewards::RewardError;

#[derive(Debug, Error)]
pub enum MappoError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{rewards} rewards but {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("no samples to train on")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}
