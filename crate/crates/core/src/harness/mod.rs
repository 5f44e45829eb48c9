//! Experiment orchestration: configs, evaluation runs, output files and
//! run manifests.

mod commands;
mod config;
mod gradcheck;
mod manifest;
mod runner;

use thiserror::Error;

pub use commands::{
    cmd_eval_battery, cmd_eval_fault, cmd_eval_patrol, cmd_gradcheck, cmd_train, load_policy,
    out_dir, BatteryRow, FaultReport, PatrolRow, TrainSummary,
};
pub use config::{
    EvalSection, ExperimentConfig, ExperimentSection, FaultEventSpec, FaultSection, Strategy,
    TrainSection, MAX_EVAL_AGENTS,
};
pub use gradcheck::{gradcheck_suite, GradcheckReport, GradcheckRow};
pub use manifest::{sha256_hex, RunManifest, MANIFEST_FILE};
pub use runner::{run_episode, Controller, EvalContext, FaultPlan};

use crate::autodiff::{AutodiffError, CheckpointError};
use crate::environment::EnvError;
use crate::gridmap::MapError;
use crate::mappo::MappoError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Mappo(#[from] MappoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error(
        "{n} agents: only {clean} of {needed} failure-free episodes after {attempts} attempts"
    )]
    QuotaUnreachable {
        n: usize,
        clean: usize,
        needed: usize,
        attempts: usize,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 1 for everything that went wrong
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Map(_) | HarnessError::Checkpoint(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}
