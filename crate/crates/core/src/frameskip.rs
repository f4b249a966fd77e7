//! Extended action space where every basis action comes in a short-repeat
//! and a long-repeat variant.
//!
//! Index `k` in `[0, 2|A|)` plays basis action `k mod |A|`, repeated `r1`
//! times when `k < |A|` and `r2` times otherwise.

use std::fmt;

use crate::envs::{EnvError, Environment};
use crate::nn::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ActionError {
    #[error("extended action {index} out of range for {count} actions")]
    OutOfRange { index: usize, count: usize },
    #[error("invalid action space: {0}")]
    InvalidSpace(String),
    #[error("no decisions to summarize")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtendedActionSpace {
    basis_count: usize,
    r1: u32,
    r2: u32,
}

impl ExtendedActionSpace {
    pub fn new(basis_count: usize, r1: u32, r2: u32) -> Result<Self, ActionError> {
        if basis_count == 0 {
            return Err(ActionError::InvalidSpace("need at least one basis action".into()));
        }
        if r1 == 0 || r2 == 0 {
            return Err(ActionError::InvalidSpace(format!("repeats must be >= 1, got r1={r1} r2={r2}")));
        }
        Ok(Self { basis_count, r1, r2 })
    }

    /// Static frame skip `repeat`, encoded with both variants sharing one
    /// repeat count.
    pub fn static_skip(basis_count: usize, repeat: u32) -> Result<Self, ActionError> {
        Self::new(basis_count, repeat, repeat)
    }

    pub fn basis_count(&self) -> usize {
        self.basis_count
    }

    pub fn r1(&self) -> u32 {
        self.r1
    }

    pub fn r2(&self) -> u32 {
        self.r2
    }

    pub fn is_static(&self) -> bool {
        self.r1 == self.r2
    }

    /// Number of extended actions, `2|A|`.
    pub fn len(&self) -> usize {
        2 * self.basis_count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(basis, repeat)` for extended index `k`.
    pub fn decode(&self, k: usize) -> Result<(usize, u32), ActionError> {
        self.action(k).map(|a| (a.basis(), a.repeat()))
    }

    pub fn action(&self, k: usize) -> Result<ExtendedAction, ActionError> {
        if k >= self.len() {
            return Err(ActionError::OutOfRange { index: k, count: self.len() });
        }
        Ok(ExtendedAction { index: k, space: *self })
    }

    pub fn actions(&self) -> impl Iterator<Item = ExtendedAction> + '_ {
        (0..self.len()).map(move |index| ExtendedAction { index, space: *self })
    }
}

/// An index into an [`ExtendedActionSpace`]; basis and repeat are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtendedAction {
    index: usize,
    space: ExtendedActionSpace,
}

impl ExtendedAction {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn basis(&self) -> usize {
        self.index % self.space.basis_count
    }

    pub fn repeat(&self) -> u32 {
        if self.is_long() {
            self.space.r2
        } else {
            self.space.r1
        }
    }

    /// True for the `r2` half of the space.
    pub fn is_long(&self) -> bool {
        self.index >= self.space.basis_count
    }

    pub fn space(&self) -> &ExtendedActionSpace {
        &self.space
    }
}

impl fmt::Display for ExtendedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(basis {} x{})", self.index, self.basis(), self.repeat())
    }
}

/// Result of playing one basis action for up to `repeat` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatOutcome {
    /// Undiscounted sum over the frames actually played.
    pub reward: f64,
    pub frame_rewards: Vec<f64>,
    pub observation: Tensor,
    pub terminal: bool,
    /// The episode hit its frame cap without reaching a terminal state.
    pub truncated: bool,
    pub frames_used: u32,
}

/// Step `env` with `basis` up to `repeat` times, stopping as soon as the
/// episode ends.
pub fn execute_repeated<E: Environment + ?Sized>(
    env: &mut E,
    basis: usize,
    repeat: u32,
) -> Result<RepeatOutcome, EnvError> {
    if env.is_done() {
        return Err(EnvError::EpisodeOver);
    }
    let mut frame_rewards = Vec::with_capacity(repeat as usize);
    let mut terminal = false;
    let mut truncated = false;
    for _ in 0..repeat {
        let step = env.step(basis)?;
        frame_rewards.push(step.reward);
        terminal = step.terminal;
        truncated = step.truncated;
        if terminal || truncated {
            break;
        }
    }
    Ok(RepeatOutcome {
        reward: frame_rewards.iter().sum(),
        frames_used: frame_rewards.len() as u32,
        frame_rewards,
        observation: env.observe(),
        terminal,
        truncated,
    })
}

/// Fraction of decisions that used the long (`r2`) variant.
pub fn long_action_fraction<'a, I>(decisions: I) -> Result<f64, ActionError>
where
    I: IntoIterator<Item = &'a ExtendedAction>,
{
    let (long, total) = decisions
        .into_iter()
        .fold((0usize, 0usize), |(l, t), a| (l + a.is_long() as usize, t + 1));
    if total == 0 {
        return Err(ActionError::Empty);
    }
    Ok(long as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{FrameStep, Observation};
    use crate::nn::TensorShape;
    use proptest::prelude::*;

    /// Constant per-frame reward, terminal after `end_after` frames.
    struct Scripted {
        reward: f64,
        end_after: Option<u32>,
        frames: u32,
    }

    impl Environment for Scripted {
        fn basis_action_count(&self) -> usize {
            2
        }
        fn observation_shape(&self) -> TensorShape {
            TensorShape::flat(1).unwrap()
        }
        fn reset(&mut self, _seed: u64) {
            self.frames = 0;
        }
        fn step(&mut self, _basis: usize) -> Result<FrameStep, EnvError> {
            self.frames += 1;
            Ok(FrameStep { reward: self.reward, terminal: self.is_done(), truncated: false })
        }
        fn is_done(&self) -> bool {
            self.end_after.is_some_and(|n| self.frames >= n)
        }
        fn observe(&self) -> Observation {
            Tensor::new(self.observation_shape(), vec![self.frames as f64]).unwrap()
        }
        fn state_key(&self) -> u64 {
            self.frames as u64
        }
    }

    #[test]
    fn decode_examples() {
        let atari = ExtendedActionSpace::new(18, 4, 20).unwrap();
        assert_eq!(atari.decode(3), Ok((3, 4)));
        assert_eq!(atari.decode(21), Ok((3, 20)));
        assert_eq!(atari.len(), 36);
        let small = ExtendedActionSpace::new(2, 1, 6).unwrap();
        assert_eq!(small.decode(0), Ok((0, 1)));
        assert_eq!(small.decode(4), Err(ActionError::OutOfRange { index: 4, count: 4 }));
    }

    #[test]
    fn invalid_spaces() {
        assert!(ExtendedActionSpace::new(0, 1, 2).is_err());
        assert!(ExtendedActionSpace::new(3, 0, 2).is_err());
        assert!(ExtendedActionSpace::new(3, 1, 0).is_err());
    }

    #[test]
    fn repeat_without_terminal() {
        let mut env = Scripted { reward: 0.1, end_after: None, frames: 0 };
        let out = execute_repeated(&mut env, 0, 4).unwrap();
        assert!((out.reward - 0.4).abs() < 1e-12);
        assert_eq!(out.frames_used, 4);
        assert!(!out.terminal);
        assert_eq!(out.observation.data(), &[4.0]);
    }

    #[test]
    fn repeat_stops_at_terminal() {
        let mut env = Scripted { reward: 1.0, end_after: Some(2), frames: 0 };
        let out = execute_repeated(&mut env, 1, 6).unwrap();
        assert_eq!(out.reward, 2.0);
        assert_eq!(out.frames_used, 2);
        assert!(out.terminal);
        assert_eq!(execute_repeated(&mut env, 1, 6), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn single_repeat_is_single_step() {
        let mut a = Scripted { reward: 0.5, end_after: None, frames: 0 };
        let mut b = Scripted { reward: 0.5, end_after: None, frames: 0 };
        let out = execute_repeated(&mut a, 0, 1).unwrap();
        let step = b.step(0).unwrap();
        assert_eq!(out.reward, step.reward);
        assert_eq!(out.frames_used, 1);
        assert_eq!(out.observation, b.observe());
    }

    #[test]
    fn long_fraction_examples() {
        let space = ExtendedActionSpace::new(3, 1, 5).unwrap();
        let mut picks: Vec<ExtendedAction> = (0..7).map(|_| space.action(4).unwrap()).collect();
        picks.extend((0..3).map(|_| space.action(2).unwrap()));
        assert!((long_action_fraction(&picks).unwrap() - 0.7).abs() < 1e-15);
        let short: Vec<_> = (0..3).map(|k| space.action(k).unwrap()).collect();
        assert_eq!(long_action_fraction(&short).unwrap(), 0.0);
        let long: Vec<_> = (3..6).map(|k| space.action(k).unwrap()).collect();
        assert_eq!(long_action_fraction(&long).unwrap(), 1.0);
        assert_eq!(long_action_fraction(&[]), Err(ActionError::Empty));
    }

    proptest! {
        #[test]
        fn decode_partitions_space(n in 1usize..40, r1 in 1u32..30, r2 in 1u32..30) {
            let space = ExtendedActionSpace::new(n, r1, r2).unwrap();
            let mut seen = vec![(0u32, 0u32); n];
            for k in 0..space.len() {
                let (basis, repeat) = space.decode(k).unwrap();
                prop_assert!(basis < n);
                if k < n {
                    prop_assert_eq!(repeat, r1);
                    seen[basis].0 += 1;
                } else {
                    prop_assert_eq!(repeat, r2);
                    seen[basis].1 += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == (1, 1)));
        }
    }
}
