//! Small differentiable-function toolkit: dense and valid-convolution
//! layers with rectifiers, hand-written backpropagation and RMSProp.

mod network;
mod optim;
mod shape;

pub use network::{atari_conv_stack, build_network, plan_layers, LayerPlan, LayerSpec, NetworkParams, ParamArrays};
pub use optim::{apply_update, clip_global_norm, rmsprop_step, sgd_step, ClipMode, OptimizerConfig, OptimizerKind};
pub use shape::{Tensor, TensorShape};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {layer}: {reason}")]
    Config { layer: usize, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient")]
    NonFinite,
    #[error("invalid optimizer config: {0}")]
    Optimizer(String),
}
