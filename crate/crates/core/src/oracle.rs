//! Exact value iteration over the extended-action MDP induced by an
//! [`MdpSpec`] and an [`ExtendedActionSpace`].

use std::fmt::Write as _;

use crate::envs::{mdp_env_step, EnvError, MdpSpec};
use crate::frameskip::{ExtendedAction, ExtendedActionSpace};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("action space has {space} basis actions, MDP has {mdp}")]
    ActionMismatch { space: usize, mdp: usize },
    #[error("value iteration did not converge in {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("golden file line {line}: {reason}")]
    Golden { line: usize, reason: String },
}

/// How a repeated action's frames are discounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscountMode {
    /// Rewards summed undiscounted within a repeat; one factor of gamma per decision.
    #[default]
    PerDecision,
    /// Rewards discounted frame by frame; gamma^frames on the bootstrap.
    PerFrame,
}

/// Result of playing one extended action from a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub next_state: usize,
    pub reward: f64,
    /// Multiplier applied to the value of `next_state`.
    pub discount: f64,
    pub frames: u32,
    pub terminal: bool,
}

pub fn roll_out(
    spec: &MdpSpec,
    space: &ExtendedActionSpace,
    state: usize,
    k: usize,
    gamma: f64,
    mode: DiscountMode,
) -> Result<Rollout, OracleError> {
    let action = space.action(k).map_err(|e| OracleError::Invalid(e.to_string()))?;
    let mut s = state;
    let mut reward = 0.0;
    let mut weight = 1.0;
    let mut frames = 0;
    let mut terminal = false;
    for _ in 0..action.repeat() {
        let (next, r, done) = mdp_env_step(spec, s, action.basis())?;
        reward += weight * r;
        if mode == DiscountMode::PerFrame {
            weight *= gamma;
        }
        frames += 1;
        s = next;
        if done {
            terminal = true;
            break;
        }
    }
    let discount = match mode {
        DiscountMode::PerDecision => gamma,
        DiscountMode::PerFrame => weight,
    };
    Ok(Rollout { next_state: s, reward, discount, frames, terminal })
}

/// Precomputed rollouts for every `(state, extended action)` pair.
#[derive(Debug, Clone)]
pub struct ExtendedMdp {
    space: ExtendedActionSpace,
    terminal: Vec<bool>,
    gamma: f64,
    mode: DiscountMode,
    /// Indexed `[state * space.len() + k]`; `None` for terminal states.
    rollouts: Vec<Option<Rollout>>,
}

impl ExtendedMdp {
    pub fn build(
        spec: &MdpSpec,
        space: &ExtendedActionSpace,
        gamma: f64,
        mode: DiscountMode,
    ) -> Result<Self, OracleError> {
        if space.basis_count() != spec.basis_action_count() {
            return Err(OracleError::ActionMismatch { space: space.basis_count(), mdp: spec.basis_action_count() });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(OracleError::Invalid(format!("gamma {gamma} outside [0, 1)")));
        }
        let mut rollouts = Vec::with_capacity(spec.state_count() * space.len());
        let mut terminal = Vec::with_capacity(spec.state_count());
        for s in 0..spec.state_count() {
            terminal.push(spec.is_terminal(s));
            for k in 0..space.len() {
                rollouts.push(if spec.is_terminal(s) {
                    None
                } else {
                    Some(roll_out(spec, space, s, k, gamma, mode)?)
                });
            }
        }
        Ok(Self { space: *space, terminal, gamma, mode, rollouts })
    }

    pub fn space(&self) -> &ExtendedActionSpace {
        &self.space
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode(&self) -> DiscountMode {
        self.mode
    }

    pub fn state_count(&self) -> usize {
        self.terminal.len()
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn rollout(&self, state: usize, k: usize) -> Option<&Rollout> {
        self.rollouts[state * self.space.len() + k].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    space: ExtendedActionSpace,
    /// `[state * 2|A| + k]`; terminal rows are zero.
    q: Vec<f64>,
    v: Vec<f64>,
    policy: Vec<Option<ExtendedAction>>,
    pub iterations: usize,
    pub residual: f64,
    /// Max-norm change of each sweep, in order.
    pub residuals: Vec<f64>,
}

impl OracleResult {
    pub fn q(&self, state: usize, k: usize) -> f64 {
        self.q[state * self.space.len() + k]
    }

    pub fn q_row(&self, state: usize) -> &[f64] {
        let n = self.space.len();
        &self.q[state * n..(state + 1) * n]
    }

    pub fn v(&self, state: usize) -> f64 {
        self.v[state]
    }

    /// Greedy action with lowest-index tie-breaking; `None` at terminal states.
    pub fn greedy(&self, state: usize) -> Option<ExtendedAction> {
        self.policy[state]
    }

    pub fn state_count(&self) -> usize {
        self.v.len()
    }

    pub fn space(&self) -> &ExtendedActionSpace {
        &self.space
    }

    /// Text table `state,extended_action,q_value` with 12 significant
    /// digits, non-terminal states only.
    pub fn to_golden(&self) -> String {
        let mut out = String::from("state,extended_action,q_value\n");
        for s in 0..self.state_count() {
            if self.policy[s].is_none() {
                continue;
            }
            for k in 0..self.space.len() {
                writeln!(out, "{s},{k},{:.11e}", self.q(s, k)).expect("string write");
            }
        }
        out
    }
}

/// Lowest index among the maxima.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Synchronous sweeps `Q(s,k) = R(s,k) + discount(s,k) * max_k' Q(s',k')`
/// until the max-norm change falls below `tolerance`.
pub fn value_iteration(ext: &ExtendedMdp, tolerance: f64, max_iters: usize) -> Result<OracleResult, OracleError> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(OracleError::Invalid("tolerance must be > 0".into()));
    }
    let n = ext.space.len();
    let states = ext.state_count();
    let mut v = vec![0.0; states];
    let mut q = vec![0.0; states * n];
    let mut residuals = Vec::new();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut next_v = vec![0.0; states];
        residual = 0.0;
        for s in 0..states {
            if ext.is_terminal(s) {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for k in 0..n {
                let r = ext.rollout(s, k).expect("non-terminal state has rollouts");
                let bootstrap = if r.terminal { 0.0 } else { r.discount * v[r.next_state] };
                let value = r.reward + bootstrap;
                residual = f64::max(residual, (value - q[s * n + k]).abs());
                q[s * n + k] = value;
                best = best.max(value);
            }
            next_v[s] = best;
        }
        v = next_v;
        residuals.push(residual);
        if residual < tolerance {
            let policy = (0..states)
                .map(|s| {
                    (!ext.is_terminal(s)).then(|| {
                        ext.space.action(argmax(&q[s * n..(s + 1) * n])).expect("index in range")
                    })
                })
                .collect();
            return Ok(OracleResult {
                space: ext.space,
                q,
                v,
                policy,
                iterations: residuals.len(),
                residual,
                residuals,
            });
        }
    }
    Err(OracleError::NotConverged { iterations: max_iters, residual })
}

/// Build the extended MDP and solve it with the default 1e-9 tolerance.
pub fn solve(
    spec: &MdpSpec,
    space: &ExtendedActionSpace,
    gamma: f64,
    mode: DiscountMode,
) -> Result<OracleResult, OracleError> {
    let ext = ExtendedMdp::build(spec, space, gamma, mode)?;
    value_iteration(&ext, 1e-9, 100_000)
}

/// Parse a golden table back into `(state, extended_action, q_value)` rows.
pub fn parse_golden(text: &str) -> Result<Vec<(usize, usize, f64)>, OracleError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let bad = |reason: &str| OracleError::Golden { line: i + 1, reason: reason.to_string() };
        let mut parts = line.split(',');
        let (Some(s), Some(k), Some(q), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected three comma-separated fields"));
        };
        rows.push((
            s.trim().parse().map_err(|_| bad("bad state"))?,
            k.trim().parse().map_err(|_| bad("bad action"))?,
            q.trim().parse().map_err(|_| bad("bad q value"))?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain_persist, self_loop, two_state_chain, ChainPersistParams, ADVANCE};

    fn chain() -> MdpSpec {
        chain_persist(&ChainPersistParams::default()).unwrap()
    }

    #[test]
    fn repeat_one_matches_single_step() {
        let spec = chain();
        let space = ExtendedActionSpace::new(2, 1, 6).unwrap();
        for s in 0..24 {
            for k in 0..2 {
                let r = roll_out(&spec, &space, s, k, 0.9, DiscountMode::PerDecision).unwrap();
                let (next, reward, terminal) = mdp_env_step(&spec, s, k).unwrap();
                assert_eq!((r.next_state, r.reward, r.terminal, r.frames), (next, reward, terminal, 1));
                assert_eq!(r.discount, 0.9);
            }
        }
    }

    #[test]
    fn long_advance_through_corridor() {
        let space = ExtendedActionSpace::new(2, 1, 6).unwrap();
        let r = roll_out(&chain(), &space, 0, 2 + ADVANCE, 0.99, DiscountMode::PerDecision).unwrap();
        assert_eq!(r.next_state, 6);
        assert!((r.reward - 0.6).abs() < 1e-12);
        assert_eq!(r.frames, 6);
    }

    #[test]
    fn rollout_stops_at_terminal() {
        let space = ExtendedActionSpace::new(2, 1, 6).unwrap();
        let r = roll_out(&chain(), &space, 22, 2, 0.5, DiscountMode::PerFrame).unwrap();
        assert_eq!((r.next_state, r.frames, r.terminal), (24, 2, true));
        assert!((r.reward - (0.1 + 0.5 * 1.1)).abs() < 1e-15);
        assert_eq!(r.discount, 0.25);
    }

    #[test]
    fn self_loop_value_is_geometric_sum() {
        let space = ExtendedActionSpace::new(1, 1, 1).unwrap();
        let res = solve(&self_loop(1.0), &space, 0.5, DiscountMode::PerDecision).unwrap();
        assert!((res.v(0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn two_state_chain_values() {
        let space = ExtendedActionSpace::new(1, 1, 1).unwrap();
        let res = solve(&two_state_chain(1.0), &space, 0.9, DiscountMode::PerDecision).unwrap();
        assert!((res.q(1, 0) - 1.0).abs() < 1e-12);
        assert!((res.q(0, 0) - 0.9).abs() < 1e-12);
        assert_eq!(res.v(2), 0.0);
        assert!(res.greedy(2).is_none());
    }

    #[test]
    fn residuals_never_increase() {
        let space = ExtendedActionSpace::new(2, 1, 6).unwrap();
        for mode in [DiscountMode::PerDecision, DiscountMode::PerFrame] {
            let res = solve(&chain(), &space, 0.99, mode).unwrap();
            assert!(res.residual < 1e-9);
            for w in res.residuals.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{:?}", res.residuals);
            }
        }
        let looped = solve(&self_loop(1.0), &ExtendedActionSpace::new(1, 1, 3).unwrap(), 0.9, DiscountMode::PerFrame)
            .unwrap();
        for w in looped.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn not_converged_reports_residual() {
        let ext = ExtendedMdp::build(&self_loop(1.0), &ExtendedActionSpace::new(1, 1, 1).unwrap(), 0.99, DiscountMode::PerDecision)
            .unwrap();
        match value_iteration(&ext, 1e-9, 5) {
            Err(OracleError::NotConverged { iterations: 5, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(value_iteration(&ext, 0.0, 5).is_err());
    }

    #[test]
    fn mismatched_space_rejected() {
        let space = ExtendedActionSpace::new(3, 1, 6).unwrap();
        assert!(matches!(
            ExtendedMdp::build(&chain(), &space, 0.9, DiscountMode::PerDecision),
            Err(OracleError::ActionMismatch { .. })
        ));
    }

    #[test]
    fn golden_round_trip() {
        let space = ExtendedActionSpace::new(2, 1, 6).unwrap();
        let res = solve(&chain(), &space, 0.99, DiscountMode::PerDecision).unwrap();
        let text = res.to_golden();
        let rows = parse_golden(&text).unwrap();
        assert_eq!(rows.len(), 24 * 4);
        for (s, k, q) in rows {
            assert!((q - res.q(s, k)).abs() <= 1e-11 * q.abs().max(1.0));
        }
        assert!(parse_golden("h\n1,2\n").is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0, 0.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0]), 0);
    }
}
