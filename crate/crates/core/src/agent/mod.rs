//! The dynamic frame-skip learner.
//!
//! Behaviour is epsilon-greedy over all `2|A|` extended actions. Learning
//! regresses `Q(s, a)` toward `y = r + gamma * max_a' Q_target(s', a')`
//! using transitions sampled from replay, with a periodically synchronized
//! target copy. A static frame skip is the special case `r1 == r2`.

mod qfunction;
mod tabular;

pub use qfunction::{QFunction, QTable};
pub use tabular::{greedy_episode, tabular_q_learning, AlphaSchedule, TabularOutcome, TabularRun};

use rand::Rng;

use crate::envs::StackedState;
use crate::frameskip::{ExtendedAction, ExtendedActionSpace};
use crate::nn::{apply_update, ClipMode, NnError, OptimizerConfig, ParamArrays};
pub use crate::oracle::DiscountMode;
use crate::replay::{ReplayBuffer, ReplayError, Transition};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error("Q-function has {got} outputs, action space needs {want}")]
    ActionCount { got: usize, want: usize },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("non-finite TD target")]
    NonFiniteTarget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_steps: u64,
    pub batch_size: usize,
    /// Minimum replay size before learning starts.
    pub learn_start: usize,
    /// Target network refresh period, in decisions.
    pub target_sync_interval: u64,
    pub eps_test: f64,
    pub discount_mode: DiscountMode,
    /// Clip rewards to `[-1, 1]` inside TD targets. Scores stay unclipped.
    pub reward_clip: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_anneal_steps: 50_000,
            batch_size: 32,
            learn_start: 1_000,
            target_sync_interval: 1_000,
            eps_test: 0.05,
            discount_mode: DiscountMode::PerDecision,
            reward_clip: false,
        }
    }
}

impl AgentConfig {
    /// Exploration annealed over 2M decisions, as used for Atari-scale runs.
    pub fn atari_scale() -> Self {
        Self { eps_anneal_steps: 2_000_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !unit(self.eps_start) || !unit(self.eps_end) || !unit(self.eps_test) {
            return bad("epsilons must be in [0, 1]");
        }
        if self.eps_start < self.eps_end {
            return bad("eps_start must be >= eps_end");
        }
        if self.eps_anneal_steps == 0 || self.batch_size == 0 || self.learn_start == 0 || self.target_sync_interval == 0
        {
            return bad("eps_anneal_steps, batch_size, learn_start and target_sync_interval must be positive");
        }
        Ok(())
    }
}

/// Linear anneal from `eps_start` at step 0 to `eps_end` at
/// `eps_anneal_steps`, constant afterwards.
pub fn epsilon_at(cfg: &AgentConfig, step: u64) -> f64 {
    if step >= cfg.eps_anneal_steps {
        return cfg.eps_end;
    }
    let t = step as f64 / cfg.eps_anneal_steps as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * t
}

/// Index of the largest value, lowest index on ties.
pub fn greedy_index(values: &[f64]) -> usize {
    crate::oracle::argmax(values)
}

/// Epsilon-greedy choice. One uniform draw decides whether to explore; a
/// second picks the random action.
pub fn select_action<R: Rng + ?Sized>(
    q: &QFunction,
    space: &ExtendedActionSpace,
    state: &StackedState,
    eps: f64,
    rng: &mut R,
) -> Result<ExtendedAction, AgentError> {
    if q.action_count() != space.len() {
        return Err(AgentError::ActionCount { got: q.action_count(), want: space.len() });
    }
    let mut failure = None;
    let k = epsilon_greedy(
        || {
            q.values(state).unwrap_or_else(|e| {
                failure = Some(e);
                vec![0.0; space.len()]
            })
        },
        space.len(),
        eps,
        rng,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(space.action(k).expect("index in range")),
    }
}

/// Core epsilon-greedy draw over `count` actions; `values` is only
/// evaluated when exploiting.
pub fn epsilon_greedy<R, F>(values: F, count: usize, eps: f64, rng: &mut R) -> usize
where
    R: Rng + ?Sized,
    F: FnOnce() -> Vec<f64>,
{
    if rng.gen::<f64>() < eps {
        rng.gen_range(0..count)
    } else {
        greedy_index(&values())
    }
}

/// Regression targets for a batch.
///
/// Terminal transitions use the reward alone. Otherwise `per_decision`
/// gives `r + gamma * max Q'` and `per_frame` gives
/// `sum_t gamma^t r_t + gamma^frames * max Q'`.
pub fn td_targets(batch: &[&Transition], target: &QFunction, cfg: &AgentConfig) -> Result<Vec<f64>, AgentError> {
    let clip = |r: f64| if cfg.reward_clip { r.clamp(-1.0, 1.0) } else { r };
    batch
        .iter()
        .map(|t| {
            let (reward, discount) = match cfg.discount_mode {
                DiscountMode::PerDecision => (clip(t.reward), cfg.gamma),
                DiscountMode::PerFrame => {
                    let mut weight = 1.0;
                    let mut sum = 0.0;
                    for &r in &t.frame_rewards {
                        sum += weight * clip(r);
                        weight *= cfg.gamma;
                    }
                    (sum, weight)
                }
            };
            let y = if t.terminal { reward } else { reward + discount * target.max_value(&t.next_state)? };
            if y.is_finite() {
                Ok(y)
            } else {
                Err(AgentError::NonFiniteTarget)
            }
        })
        .collect()
}

/// Per-batch learning record.
#[derive(Debug, Clone, PartialEq)]
pub struct TdBatch {
    pub states: Vec<StackedState>,
    pub actions: Vec<ExtendedAction>,
    pub targets: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Raw `y - Q(s, a)`.
    pub td_errors: Vec<f64>,
    /// TD errors after clipping; the output-layer gradient of sample `i` is
    /// `-applied_errors[i]`.
    pub applied_errors: Vec<f64>,
}

/// One learning step on a sampled batch.
///
/// Returns `Ok(None)` without touching anything when the buffer holds fewer
/// than `max(batch_size, learn_start)` transitions.
///
/// Network backends average the gradient of `0.5 * delta^2` over the batch
/// and take one optimizer step. The tabular backend applies
/// `Q(s,a) += learning_rate * delta` per sample.
pub fn train_step<R: Rng + ?Sized>(
    online: &mut QFunction,
    target: &QFunction,
    buf: &ReplayBuffer,
    cfg: &AgentConfig,
    opt: &OptimizerConfig,
    rng: &mut R,
) -> Result<Option<TdBatch>, AgentError> {
    if buf.len() < cfg.batch_size.max(cfg.learn_start) {
        return Ok(None);
    }
    let batch = buf.sample(cfg.batch_size, rng)?;
    let targets = td_targets(&batch, target, cfg)?;
    let mut predicted = Vec::with_capacity(batch.len());
    for t in &batch {
        predicted.push(online.values(&t.state)?[t.action.index()]);
    }
    let td_errors: Vec<f64> = targets.iter().zip(&predicted).map(|(y, q)| y - q).collect();
    let applied_errors: Vec<f64> = match opt.clip_mode {
        ClipMode::TdError => td_errors.iter().map(|d| d.clamp(-opt.clip_value, opt.clip_value)).collect(),
        ClipMode::GlobalNorm => td_errors.clone(),
    };

    match online {
        QFunction::Tabular(table) => {
            for (t, delta) in batch.iter().zip(&applied_errors) {
                table.row_mut(t.state.key)[t.action.index()] += opt.learning_rate * delta;
            }
        }
        QFunction::Network(net) => {
            let mut grads = ParamArrays::zeros_like(&net.params);
            let mut out_grad = vec![0.0; net.output_count()];
            let scale = 1.0 / batch.len() as f64;
            for (t, delta) in batch.iter().zip(&applied_errors) {
                if *delta == 0.0 {
                    continue;
                }
                out_grad.iter_mut().for_each(|g| *g = 0.0);
                out_grad[t.action.index()] = -delta * scale;
                net.accumulate_backward(t.state.data(), &out_grad, &mut grads)?;
            }
            apply_update(net, &grads, opt)?;
        }
    }

    Ok(Some(TdBatch {
        states: batch.iter().map(|t| t.state.clone()).collect(),
        actions: batch.iter().map(|t| t.action).collect(),
        targets,
        predicted,
        td_errors,
        applied_errors,
    }))
}

/// Copy online into target every `target_sync_interval` steps.
pub fn maybe_sync_target(online: &QFunction, target: &mut QFunction, step: u64, cfg: &AgentConfig) -> bool {
    if step > 0 && step.is_multiple_of(cfg.target_sync_interval) {
        target.sync_from(online);
        true
    } else {
        false
    }
}

/// Online and target Q-functions plus the decision counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub space: ExtendedActionSpace,
    pub cfg: AgentConfig,
    pub opt: OptimizerConfig,
    pub online: QFunction,
    pub target: QFunction,
    /// Training decisions taken so far; drives epsilon and target sync.
    pub step: u64,
}

impl Agent {
    pub fn new(
        space: ExtendedActionSpace,
        cfg: AgentConfig,
        opt: OptimizerConfig,
        online: QFunction,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        opt.validate()?;
        if online.action_count() != space.len() {
            return Err(AgentError::ActionCount { got: online.action_count(), want: space.len() });
        }
        let target = online.clone();
        Ok(Self { space, cfg, opt, online, target, step: 0 })
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(&self.cfg, self.step)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &StackedState, eps: f64, rng: &mut R) -> Result<ExtendedAction, AgentError> {
        select_action(&self.online, &self.space, state, eps, rng)
    }

    pub fn learn<R: Rng + ?Sized>(&mut self, buf: &ReplayBuffer, rng: &mut R) -> Result<Option<TdBatch>, AgentError> {
        train_step(&mut self.online, &self.target, buf, &self.cfg, &self.opt, rng)
    }

    /// Advance the decision counter, syncing the target when due.
    pub fn advance(&mut self) -> bool {
        self.step += 1;
        maybe_sync_target(&self.online, &mut self.target, self.step, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, LayerSpec, OptimizerKind, Tensor, TensorShape};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn state(key: u64, data: Vec<f64>) -> StackedState {
        let shape = TensorShape::flat(data.len()).unwrap();
        StackedState { key, tensor: Arc::new(Tensor::new(shape, data).unwrap()) }
    }

    fn table_with(values: &[f64]) -> QFunction {
        let mut t = QTable::new(values.len());
        t.row_mut(0).copy_from_slice(values);
        QFunction::Tabular(t)
    }

    fn transition(space: &ExtendedActionSpace, k: usize, frame_rewards: Vec<f64>, terminal: bool) -> Transition {
        Transition {
            state: state(0, vec![0.5, -0.5]),
            action: space.action(k).unwrap(),
            reward: frame_rewards.iter().sum(),
            frame_rewards,
            next_state: state(1, vec![1.0, 0.0]),
            terminal,
        }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig::atari_scale();
        assert_eq!(epsilon_at(&cfg, 0), 1.0);
        assert_eq!(epsilon_at(&cfg, 2_000_000), 0.1);
        assert_eq!(epsilon_at(&cfg, 5_000_000), 0.1);
        let short = AgentConfig { eps_anneal_steps: 100, ..cfg };
        assert!((epsilon_at(&short, 50) - 0.55).abs() < 1e-12);
        assert!(epsilon_at(&short, 20) > epsilon_at(&short, 21));
    }

    #[test]
    fn greedy_selection_and_ties() {
        let space = ExtendedActionSpace::new(2, 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(0, vec![0.0]);
        let q = table_with(&[1.0, 3.0, 2.0, 0.0]);
        assert_eq!(select_action(&q, &space, &s, 0.0, &mut rng).unwrap().index(), 1);
        let tie_space = ExtendedActionSpace::new(1, 1, 4).unwrap();
        let tie = table_with(&[5.0, 5.0]);
        assert_eq!(select_action(&tie, &tie_space, &s, 0.0, &mut rng).unwrap().index(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let space = ExtendedActionSpace::new(2, 1, 4).unwrap();
        let q = table_with(&[9.0, 0.0, 0.0, 0.0]);
        let s = state(0, vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[select_action(&q, &space, &s, 1.0, &mut rng).unwrap().index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn target_examples() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let mut target = QTable::new(2);
        target.row_mut(1).copy_from_slice(&[2.0, -1.0]);
        let target = QFunction::Tabular(target);
        let cfg = AgentConfig { gamma: 0.9, ..Default::default() };

        let term = transition(&space, 0, vec![5.0], true);
        assert_eq!(td_targets(&[&term], &target, &cfg).unwrap(), vec![5.0]);

        let t = transition(&space, 0, vec![1.0], false);
        assert!((td_targets(&[&t], &target, &cfg).unwrap()[0] - 2.8).abs() < 1e-12);

        let zero_target = QFunction::Tabular(QTable::new(2));
        let two = transition(&space, 1, vec![1.0, 1.0], false);
        let per_frame = AgentConfig { discount_mode: DiscountMode::PerFrame, ..cfg };
        assert!((td_targets(&[&two], &zero_target, &per_frame).unwrap()[0] - 1.9).abs() < 1e-12);
        assert!((td_targets(&[&two], &zero_target, &cfg).unwrap()[0] - 2.0).abs() < 1e-12);
        // gamma^frames on the bootstrap
        let y = td_targets(&[&two], &target, &per_frame).unwrap()[0];
        assert!((y - (1.9 + 0.81 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_clip_only_affects_targets() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let t = transition(&space, 0, vec![7.0], true);
        let cfg = AgentConfig { reward_clip: true, ..Default::default() };
        let q = QFunction::Tabular(QTable::new(2));
        assert_eq!(td_targets(&[&t], &q, &cfg).unwrap(), vec![1.0]);
        assert_eq!(t.reward, 7.0);
    }

    fn filled_buffer(space: &ExtendedActionSpace, reward: f64) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(16).unwrap();
        for i in 0..8 {
            buf.push(transition(space, i % space.len(), vec![reward], true));
        }
        buf
    }

    fn small_cfg() -> AgentConfig {
        AgentConfig { batch_size: 4, learn_start: 4, ..Default::default() }
    }

    #[test]
    fn underfilled_buffer_is_a_no_op() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let mut buf = ReplayBuffer::new(8).unwrap();
        buf.push(transition(&space, 0, vec![1.0], true));
        let mut online = QFunction::Tabular(QTable::new(2));
        let target = online.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = train_step(&mut online, &target, &buf, &small_cfg(), &OptimizerConfig::default(), &mut rng).unwrap();
        assert!(out.is_none());
        assert_eq!(online, target);
    }

    #[test]
    fn zero_td_error_leaves_network_unchanged() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let mut net = build_network(&[LayerSpec::Dense { units: 3 }, LayerSpec::Rectifier], &TensorShape::flat(2).unwrap(), 2, 4)
            .unwrap();
        // make Q(s, .) identically zero so terminal reward 0 gives delta 0
        net.params.weights[1].iter_mut().for_each(|w| *w = 0.0);
        net.params.biases[1].iter_mut().for_each(|b| *b = 0.0);
        let mut online = QFunction::Network(net);
        let before = online.clone();
        let target = online.clone();
        let buf = filled_buffer(&space, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = train_step(&mut online, &target, &buf, &small_cfg(), &OptimizerConfig::default(), &mut rng)
            .unwrap()
            .unwrap();
        assert!(batch.td_errors.iter().all(|&d| d == 0.0));
        assert_eq!(online, before);
    }

    #[test]
    fn tabular_step_is_q_learning_update() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let buf = filled_buffer(&space, 0.5);
        let mut online = QFunction::Tabular(QTable::new(2));
        let target = online.clone();
        let opt = OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate: 0.1, ..Default::default() };
        let cfg = AgentConfig { batch_size: 1, learn_start: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = train_step(&mut online, &target, &buf, &cfg, &opt, &mut rng).unwrap().unwrap();
        let k = batch.actions[0].index();
        let QFunction::Tabular(table) = &online else { unreachable!() };
        assert!((table.get(0, k) - 0.1 * 0.5).abs() < 1e-15);
        assert_eq!(table.get(0, 1 - k), 0.0);
    }

    #[test]
    fn td_error_is_clipped() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let buf = filled_buffer(&space, 3.0);
        let mut online = QFunction::Tabular(QTable::new(2));
        let target = online.clone();
        let opt = OptimizerConfig { learning_rate: 1.0, clip_value: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = train_step(&mut online, &target, &buf, &small_cfg(), &opt, &mut rng).unwrap().unwrap();
        assert!(batch.td_errors.iter().all(|&d| d == 3.0));
        assert!(batch.applied_errors.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn network_step_reduces_td_error() {
        let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
        let net = build_network(&[LayerSpec::Dense { units: 6 }, LayerSpec::Rectifier], &TensorShape::flat(2).unwrap(), 2, 8)
            .unwrap();
        let mut online = QFunction::Network(net);
        let target = online.clone();
        let buf = filled_buffer(&space, 0.7);
        let opt = OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate: 0.05, ..Default::default() };
        let cfg = AgentConfig { batch_size: 8, learn_start: 8, ..Default::default() };
        let s = state(0, vec![0.5, -0.5]);
        let err = |q: &QFunction| {
            let v = q.values(&s).unwrap();
            (v[0] - 0.7).abs() + (v[1] - 0.7).abs()
        };
        let start = err(&online);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            train_step(&mut online, &target, &buf, &cfg, &opt, &mut rng).unwrap();
        }
        assert!(err(&online) < start * 0.1, "{} -> {}", start, err(&online));
    }

    #[test]
    fn target_sync_schedule() {
        let cfg = AgentConfig { target_sync_interval: 1000, ..Default::default() };
        let mut online = table_with(&[1.0, 2.0]);
        let mut target = QFunction::Tabular(QTable::new(2));
        assert!(!maybe_sync_target(&online, &mut target, 999, &cfg));
        assert_ne!(online, target);
        assert!(maybe_sync_target(&online, &mut target, 1000, &cfg));
        assert_eq!(online, target);
        if let QFunction::Tabular(t) = &mut online {
            t.set(0, 0, 10.0);
        }
        assert_ne!(online, target);
        assert!(!maybe_sync_target(&online, &mut target, 0, &cfg));
    }

    #[test]
    fn network_sync_matches_forward() {
        let net = build_network(&[LayerSpec::Dense { units: 4 }], &TensorShape::flat(2).unwrap(), 2, 1).unwrap();
        let other = build_network(&[LayerSpec::Dense { units: 4 }], &TensorShape::flat(2).unwrap(), 2, 2).unwrap();
        let online = QFunction::Network(net);
        let mut target = QFunction::Network(other);
        let cfg = AgentConfig { target_sync_interval: 5, ..Default::default() };
        assert!(maybe_sync_target(&online, &mut target, 10, &cfg));
        let s = state(0, vec![0.3, -0.8]);
        assert_eq!(online.values(&s).unwrap(), target.values(&s).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        assert!(AgentConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(AgentConfig { eps_start: 0.05, eps_end: 0.1, ..Default::default() }.validate().is_err());
        assert!(AgentConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn greedy_choice_ignores_constant_shift(raw in proptest::collection::vec(-40i32..40, 1..12), shift in -1000i32..1000) {
            // quarter-integers keep every shift exact in f64
            let values: Vec<f64> = raw.iter().map(|&v| v as f64 * 0.25).collect();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift as f64).collect();
            prop_assert_eq!(greedy_index(&values), greedy_index(&shifted));
        }

        #[test]
        fn terminal_target_ignores_target_network(r in -5.0f64..5.0, junk in -100.0f64..100.0) {
            let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
            let t = transition(&space, 1, vec![r], true);
            let mut table = QTable::new(2);
            table.row_mut(1).copy_from_slice(&[junk, -junk]);
            let y = td_targets(&[&t], &QFunction::Tabular(table), &AgentConfig::default()).unwrap();
            prop_assert_eq!(y, vec![r]);
        }

        #[test]
        fn applied_error_within_clip(r in -50.0f64..50.0, clip in 0.1f64..5.0) {
            let space = ExtendedActionSpace::new(1, 1, 2).unwrap();
            let buf = filled_buffer(&space, r);
            let mut online = QFunction::Tabular(QTable::new(2));
            let target = online.clone();
            let opt = OptimizerConfig { clip_value: clip, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let batch = train_step(&mut online, &target, &buf, &small_cfg(), &opt, &mut rng).unwrap().unwrap();
            prop_assert!(batch.applied_errors.iter().all(|d| d.abs() <= clip));
        }
    }
}
