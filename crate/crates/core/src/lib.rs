//! Q-learning with a dynamic frame-skip action space.
//!
//! Every basis action of an environment is offered twice to the agent: once
//! repeated `r1` times and once repeated `r2` times. The crate contains the
//! learner (tabular and neural Q-functions, replay, target network), toy
//! environments, an exact value-iteration oracle, and the train/test epoch
//! harness used by the `dfdqn` command-line tool.

pub mod agent;
pub mod checkpoint;
pub mod envs;
pub mod frameskip;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod replay;

pub use envs::{EnvId, Environment, MdpSpec, StackedState};
pub use frameskip::{ExtendedAction, ExtendedActionSpace, RepeatOutcome};
pub use nn::{LayerSpec, NetworkParams, OptimizerConfig, TensorShape};
pub use oracle::{DiscountMode, OracleResult};
pub use replay::{ReplayBuffer, Transition};
