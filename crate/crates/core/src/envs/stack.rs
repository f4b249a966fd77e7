use std::collections::VecDeque;
use std::sync::Arc;

use super::Observation;
use crate::nn::{Tensor, TensorShape};

pub const STACK_DEPTH: usize = 4;

/// The most recent [`STACK_DEPTH`] observations concatenated channelwise,
/// oldest first, plus the environment state key of the newest frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    pub key: u64,
    pub tensor: Arc<Tensor>,
}

impl StackedState {
    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn shape(&self) -> &TensorShape {
        self.tensor.shape()
    }
}

/// Sliding window over observations.
#[derive(Debug, Clone, Default)]
pub struct FrameStack {
    frames: VecDeque<Observation>,
}

impl FrameStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start a new episode: every slot holds `first`.
    pub fn reset(&mut self, first: Observation, key: u64) -> StackedState {
        self.frames.clear();
        for _ in 0..STACK_DEPTH {
            self.frames.push_back(first.clone());
        }
        self.current(key)
    }

    /// Slide in a new observation. An empty stack is initialized by replication.
    pub fn push(&mut self, obs: Observation, key: u64) -> StackedState {
        if self.frames.is_empty() {
            return self.reset(obs, key);
        }
        self.frames.pop_front();
        self.frames.push_back(obs);
        self.current(key)
    }

    fn current(&self, key: u64) -> StackedState {
        StackedState { key, tensor: Arc::new(stack_channels(self.frames.iter())) }
    }
}

/// Stacked shape for a `[h, w, c]` observation: `[h, w, 4c]`.
pub fn stacked_shape(obs: &TensorShape) -> TensorShape {
    let (h, w, c) = obs.as_image().expect("observations are [h, w, c]");
    TensorShape::image(h, w, c * STACK_DEPTH).expect("non-empty")
}

fn stack_channels<'a>(frames: impl ExactSizeIterator<Item = &'a Observation> + Clone) -> Tensor {
    let depth = frames.len();
    let first = frames.clone().next().expect("non-empty stack");
    let (h, w, c) = first.shape().as_image().expect("observations are [h, w, c]");
    let mut data = Vec::with_capacity(h * w * c * depth);
    for pixel in 0..h * w {
        for frame in frames.clone() {
            data.extend_from_slice(&frame.data()[pixel * c..(pixel + 1) * c]);
        }
    }
    let shape = TensorShape::image(h, w, c * depth).expect("non-empty");
    Tensor::new(shape, data).expect("length matches")
}
