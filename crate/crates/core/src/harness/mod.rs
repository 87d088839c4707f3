//! Experiment orchestration: seeded training runs, evaluation, metrics
//! CSVs, checkpoints and baseline-versus-variant comparisons.

pub mod checkpoint;
mod compare;
mod config;
pub mod metrics;
mod trainer;

use thiserror::Error;

pub use compare::{
    compare, mean_curve, promotion, score_at, steps_to_match, ArmSummary, ComparisonReport,
    RunFailure, RunOutcome,
};
pub use config::{BufferConfig, EnvConfig, ExperimentConfig, TrainConfig};
pub use metrics::{EvalRow, RunMetrics, TrainRow};
pub use trainer::{evaluate, random_action, run_training, Trainer};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Imagination(#[from] crate::imagination::ImError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Replay(#[from] crate::replay::ReplayError),
    #[error(transparent)]
    State(#[from] crate::state::StateError),
}
