use super::{NetworkParams, NnError, ParamArrays};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    /// Plain gradient descent; the learning rate is the step size.
    Sgd,
}

/// What "max-norm clipping" is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipMode {
    /// Clip each per-sample TD error to `[-clip_value, clip_value]` before
    /// backpropagation. Done by the agent.
    TdError,
    /// Rescale the whole gradient so its L2 norm is at most `clip_value`.
    /// Done inside the optimizer step.
    GlobalNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Accumulator decay rho.
    pub decay: f64,
    pub epsilon: f64,
    pub clip_mode: ClipMode,
    pub clip_value: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            learning_rate: 0.00025,
            decay: 0.95,
            epsilon: 0.01,
            clip_mode: ClipMode::TdError,
            clip_value: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |what: &str| Err(NnError::Optimizer(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.decay) {
            return bad("decay must be in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        if self.clip_value.is_nan() || self.clip_value <= 0.0 {
            return bad("clip_value must be > 0");
        }
        Ok(())
    }
}

/// Scale `grads` in place so that its L2 norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamArrays, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One RMSProp update:
/// `acc <- rho*acc + (1-rho)*g^2`, `p <- p - lr*g/(sqrt(acc) + eps)`.
///
/// In [`ClipMode::GlobalNorm`] the gradient is rescaled first. A non-finite
/// gradient leaves the network untouched and returns an error.
pub fn rmsprop_step(net: &mut NetworkParams, grads: &ParamArrays, cfg: &OptimizerConfig) -> Result<(), NnError> {
    let g = prepare(net, grads, cfg)?;
    let NetworkParams { params, optimizer, .. } = net;
    let (lr, rho, eps) = (cfg.learning_rate, cfg.decay, cfg.epsilon);
    for ((p, acc), &gi) in params.iter_mut().zip(optimizer.iter_mut()).zip(g.iter()) {
        *acc = rho * *acc + (1.0 - rho) * gi * gi;
        *p -= lr * gi / (acc.sqrt() + eps);
    }
    debug_assert!(net.params.all_finite());
    Ok(())
}

/// Plain gradient descent step, with the same clipping and finiteness rules.
pub fn sgd_step(net: &mut NetworkParams, grads: &ParamArrays, cfg: &OptimizerConfig) -> Result<(), NnError> {
    let g = prepare(net, grads, cfg)?;
    for (p, &gi) in net.params.iter_mut().zip(g.iter()) {
        *p -= cfg.learning_rate * gi;
    }
    Ok(())
}

/// Dispatch on `cfg.kind`.
pub fn apply_update(net: &mut NetworkParams, grads: &ParamArrays, cfg: &OptimizerConfig) -> Result<(), NnError> {
    match cfg.kind {
        OptimizerKind::RmsProp => rmsprop_step(net, grads, cfg),
        OptimizerKind::Sgd => sgd_step(net, grads, cfg),
    }
}

fn prepare(net: &NetworkParams, grads: &ParamArrays, cfg: &OptimizerConfig) -> Result<ParamArrays, NnError> {
    if !grads.same_layout(&net.params) {
        return Err(NnError::Shape("gradient layout does not match parameters".into()));
    }
    if !grads.all_finite() {
        return Err(NnError::NonFinite);
    }
    let mut g = grads.clone();
    if cfg.clip_mode == ClipMode::GlobalNorm {
        clip_global_norm(&mut g, cfg.clip_value);
    }
    Ok(g)
}
