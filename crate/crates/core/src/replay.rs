//! Fixed-capacity FIFO experience replay with uniform sampling.

use rand::Rng;

use crate::envs::StackedState;
use crate::frameskip::ExtendedAction;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("replay capacity must be positive")]
    ZeroCapacity,
    #[error("cannot sample {requested} transitions from {available}")]
    Underfilled { requested: usize, available: usize },
}

/// One decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StackedState,
    pub action: ExtendedAction,
    /// Undiscounted sum of `frame_rewards`.
    pub reward: f64,
    /// Per-frame rewards, kept for per-frame discounting.
    pub frame_rewards: Vec<f64>,
    pub next_state: StackedState,
    /// True only for real terminal states, never for frame-cap truncation.
    pub terminal: bool,
}

impl Transition {
    pub fn frames_used(&self) -> u32 {
        self.frame_rewards.len() as u32
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// Slot the next push writes to once the buffer is full.
    cursor: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self { capacity, storage: Vec::with_capacity(capacity.min(1 << 16)), cursor: 0, inserted: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Total number of pushes ever made.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Store `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// `batch_size` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>, ReplayError> {
        if batch_size == 0 || self.len() < batch_size {
            return Err(ReplayError::Underfilled { requested: batch_size, available: self.len() });
        }
        let n = self.len();
        Ok((0..batch_size).map(|_| &self.storage[rng.gen_range(0..n)]).collect())
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.storage.split_at(self.cursor);
        older.iter().chain(newer)
    }
}
