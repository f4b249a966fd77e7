//! Experiment protocol: alternating training and testing epochs, score
//! bookkeeping, long-action statistics and multi-run comparison.
//!
//! Epoch lengths count decisions (action selections), not frames, so a
//! policy that favours long actions sees more frames per epoch.

mod compare;
mod config;
mod runner;
mod stats;

pub use compare::{compare_runs, CompareRow, COMPARE_HEADER};
pub use config::{Backend, ConfigError, RunConfig, SkipMode, CONFIG_KEYS};
pub use runner::{
    agent_from_checkpoint, best_epoch, episode_score, evaluate, initial_qfunction, parse_trajectory, read_metrics,
    run_policy, run_training, DecisionRecord, EpisodeRecord, EpochReport, PolicyRun, Trainer, METRICS_HEADER,
};
pub use stats::{stats_run, StatsReport};

use crate::agent::AgentError;
use crate::checkpoint::CheckpointError;
use crate::envs::EnvError;
use crate::frameskip::ActionError;
use crate::nn::NnError;
use crate::replay::ReplayError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("run {label} seed {seed}: {reason}")]
    Run { label: String, seed: u64, reason: String },
    #[error("no epoch reports")]
    NoReports,
    #[error("compare needs at least 2 configs, got {0}")]
    TooFewConfigs(usize),
    #[error("bad trajectory line '{0}'")]
    Trajectory(String),
    #[error("bad metrics line '{0}'")]
    Metrics(String),
}
