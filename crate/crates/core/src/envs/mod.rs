//! Deterministic desk-scale environments and frame stacking.

mod diver;
mod mdp;
mod stack;

use std::fmt;
use std::str::FromStr;

pub use diver::{DiverAction, Enemy, ToyDiver, ToyDiverState, DIVER_DEPTH, DIVER_WIDTH, MAX_OXYGEN};
pub use mdp::{chain_persist, mdp_env_step, two_state_chain, self_loop, ChainPersistParams, MdpEnv, MdpSpec, ADVANCE, DODGE};
pub use stack::{stacked_shape, FrameStack, StackedState, STACK_DEPTH};

use crate::nn::{Tensor, TensorShape};

/// One observation: a `[h, w, c]` grid of floats in `[0, 1]`.
pub type Observation = Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("environment stepped after the episode ended")]
    EpisodeOver,
    #[error("basis action {action} invalid, environment has {count}")]
    InvalidAction { action: usize, count: usize },
    #[error("state {0} out of range")]
    InvalidState(usize),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("unknown environment '{0}'")]
    UnknownEnv(String),
}

/// Outcome of a single frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStep {
    pub reward: f64,
    pub terminal: bool,
    /// Hit the per-episode frame cap; not a true terminal state.
    pub truncated: bool,
}

/// A single-owner, frame-level environment.
pub trait Environment {
    fn basis_action_count(&self) -> usize;
    fn observation_shape(&self) -> TensorShape;
    /// Start a new episode. All episode randomness derives from `episode_seed`.
    fn reset(&mut self, episode_seed: u64);
    fn step(&mut self, basis: usize) -> Result<FrameStep, EnvError>;
    /// Terminal or truncated.
    fn is_done(&self) -> bool;
    fn observe(&self) -> Observation;
    /// Digest of the full environment state; equal keys mean equal states.
    fn state_key(&self) -> u64;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn basis_action_count(&self) -> usize {
        (**self).basis_action_count()
    }
    fn observation_shape(&self) -> TensorShape {
        (**self).observation_shape()
    }
    fn reset(&mut self, episode_seed: u64) {
        (**self).reset(episode_seed)
    }
    fn step(&mut self, basis: usize) -> Result<FrameStep, EnvError> {
        (**self).step(basis)
    }
    fn is_done(&self) -> bool {
        (**self).is_done()
    }
    fn observe(&self) -> Observation {
        (**self).observe()
    }
    fn state_key(&self) -> u64 {
        (**self).state_key()
    }
}

/// Built-in environments selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    ChainPersist,
    ToyDiver,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::ChainPersist => "chain_persist",
            EnvId::ToyDiver => "toy_diver",
        }
    }

    /// Construct the environment with the given per-episode frame cap.
    pub fn build(&self, max_episode_frames: u32) -> Box<dyn Environment + Send> {
        match self {
            EnvId::ChainPersist => Box::new(MdpEnv::new(
                chain_persist(&ChainPersistParams::default()).expect("default chain is valid"),
                Some(max_episode_frames),
            )),
            EnvId::ToyDiver => Box::new(ToyDiver::new(max_episode_frames)),
        }
    }

    /// The explicit MDP behind this environment, when there is one.
    pub fn mdp_spec(&self) -> Option<MdpSpec> {
        match self {
            EnvId::ChainPersist => chain_persist(&ChainPersistParams::default()).ok(),
            EnvId::ToyDiver => None,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chain_persist" => Ok(EnvId::ChainPersist),
            "toy_diver" => Ok(EnvId::ToyDiver),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}
