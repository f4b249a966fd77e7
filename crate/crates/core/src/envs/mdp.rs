use super::{EnvError, Environment, FrameStep, Observation};
use crate::nn::{Tensor, TensorShape};

/// ChainPersist basis action: move right, collecting the corridor reward.
pub const ADVANCE: usize = 0;
/// ChainPersist basis action: move right while ducking hazards.
pub const DODGE: usize = 1;

/// Explicit deterministic finite MDP with per-frame rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    state_count: usize,
    action_count: usize,
    next: Vec<usize>,
    reward: Vec<f64>,
    terminal: Vec<bool>,
    start: usize,
}

impl MdpSpec {
    /// `next` and `reward` are indexed `[state * action_count + action]`.
    /// Rows of terminal states are ignored and rewritten as zero-reward self loops.
    pub fn new(
        state_count: usize,
        action_count: usize,
        mut next: Vec<usize>,
        mut reward: Vec<f64>,
        terminal: Vec<bool>,
        start: usize,
    ) -> Result<Self, EnvError> {
        let bad = |m: String| Err(EnvError::InvalidMdp(m));
        if state_count == 0 || action_count == 0 {
            return bad("need at least one state and one action".into());
        }
        let cells = state_count * action_count;
        if next.len() != cells || reward.len() != cells || terminal.len() != state_count {
            return bad(format!(
                "table sizes next={} reward={} terminal={} do not match {state_count} states x {action_count} actions",
                next.len(),
                reward.len(),
                terminal.len()
            ));
        }
        if start >= state_count {
            return bad(format!("start state {start} out of range"));
        }
        if terminal[start] {
            return bad("start state is terminal".into());
        }
        for s in 0..state_count {
            for a in 0..action_count {
                let i = s * action_count + a;
                if terminal[s] {
                    next[i] = s;
                    reward[i] = 0.0;
                    continue;
                }
                if next[i] >= state_count {
                    return bad(format!("transition ({s}, {a}) -> {} out of range", next[i]));
                }
                if !reward[i].is_finite() {
                    return bad(format!("reward ({s}, {a}) is not finite"));
                }
            }
        }
        Ok(Self { state_count, action_count, next, reward, terminal, start })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn basis_action_count(&self) -> usize {
        self.action_count
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal.get(state).copied().unwrap_or(false)
    }

    pub fn next_state(&self, state: usize, action: usize) -> usize {
        self.next[state * self.action_count + action]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.action_count + action]
    }
}

/// One frame of an explicit MDP: `(next state, reward, terminal)`.
pub fn mdp_env_step(spec: &MdpSpec, state: usize, action: usize) -> Result<(usize, f64, bool), EnvError> {
    if state >= spec.state_count {
        return Err(EnvError::InvalidState(state));
    }
    if action >= spec.action_count {
        return Err(EnvError::InvalidAction { action, count: spec.action_count });
    }
    if spec.terminal[state] {
        return Err(EnvError::EpisodeOver);
    }
    let next = spec.next_state(state, action);
    Ok((next, spec.reward(state, action), spec.terminal[next]))
}

/// Parameters of the ChainPersist corridor.
///
/// States `0..=length`, start at 0, state `length` is terminal. Both
/// actions move one cell right. Off-hazard cells pay `advance_reward` /
/// `dodge_reward` per frame; hazard cells pay `hazard_advance_reward` /
/// `hazard_dodge_reward`. Entering the goal adds `goal_reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPersistParams {
    pub length: usize,
    pub hazards: Vec<usize>,
    pub advance_reward: f64,
    pub dodge_reward: f64,
    pub hazard_advance_reward: f64,
    pub hazard_dodge_reward: f64,
    pub goal_reward: f64,
}

impl Default for ChainPersistParams {
    fn default() -> Self {
        Self {
            length: 24,
            hazards: vec![7, 15],
            advance_reward: 0.1,
            dodge_reward: -0.1,
            hazard_advance_reward: -1.0,
            hazard_dodge_reward: 0.1,
            goal_reward: 1.0,
        }
    }
}

impl ChainPersistParams {
    pub fn is_hazard(&self, state: usize) -> bool {
        self.hazards.contains(&state)
    }
}

pub fn chain_persist(p: &ChainPersistParams) -> Result<MdpSpec, EnvError> {
    let n = p.length;
    if n < 2 {
        return Err(EnvError::InvalidMdp("chain length must be >= 2".into()));
    }
    if let Some(h) = p.hazards.iter().find(|&&h| h == 0 || h >= n) {
        return Err(EnvError::InvalidMdp(format!("hazard {h} outside [1, {}]", n - 1)));
    }
    let states = n + 1;
    let mut next = vec![0; states * 2];
    let mut reward = vec![0.0; states * 2];
    for s in 0..n {
        let (adv, dodge) = if p.is_hazard(s) {
            (p.hazard_advance_reward, p.hazard_dodge_reward)
        } else {
            (p.advance_reward, p.dodge_reward)
        };
        let goal = if s + 1 == n { p.goal_reward } else { 0.0 };
        next[s * 2 + ADVANCE] = s + 1;
        next[s * 2 + DODGE] = s + 1;
        reward[s * 2 + ADVANCE] = adv + goal;
        reward[s * 2 + DODGE] = dodge + goal;
    }
    let mut terminal = vec![false; states];
    terminal[n] = true;
    MdpSpec::new(states, 2, next, reward, terminal, 0)
}

/// Single non-terminal state looping onto itself with `reward` per frame.
pub fn self_loop(reward: f64) -> MdpSpec {
    MdpSpec::new(1, 1, vec![0], vec![reward], vec![false], 0).expect("valid self loop")
}

/// `s0 -> s1 -> terminal`, reward only on the last hop.
pub fn two_state_chain(final_reward: f64) -> MdpSpec {
    MdpSpec::new(3, 1, vec![1, 2, 2], vec![0.0, final_reward, 0.0], vec![false, false, true], 0)
        .expect("valid chain")
}

/// Runtime wrapper around an [`MdpSpec`].
///
/// Observations are a one-hot row `[1, state_count, 1]`.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    spec: MdpSpec,
    state: usize,
    frames: u32,
    max_frames: Option<u32>,
    truncated: bool,
}

impl MdpEnv {
    pub fn new(spec: MdpSpec, max_frames: Option<u32>) -> Self {
        let state = spec.start;
        Self { spec, state, frames: 0, max_frames, truncated: false }
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Jump to an arbitrary non-terminal state (for tests and rollouts).
    pub fn set_state(&mut self, state: usize) -> Result<(), EnvError> {
        if state >= self.spec.state_count {
            return Err(EnvError::InvalidState(state));
        }
        self.state = state;
        self.frames = 0;
        self.truncated = false;
        Ok(())
    }
}

impl Environment for MdpEnv {
    fn basis_action_count(&self) -> usize {
        self.spec.action_count
    }

    fn observation_shape(&self) -> TensorShape {
        TensorShape::image(1, self.spec.state_count, 1).expect("non-empty")
    }

    fn reset(&mut self, _episode_seed: u64) {
        self.state = self.spec.start;
        self.frames = 0;
        self.truncated = false;
    }

    fn step(&mut self, basis: usize) -> Result<FrameStep, EnvError> {
        if self.truncated {
            return Err(EnvError::EpisodeOver);
        }
        let (next, reward, terminal) = mdp_env_step(&self.spec, self.state, basis)?;
        self.state = next;
        self.frames += 1;
        self.truncated = !terminal && self.max_frames.is_some_and(|cap| self.frames >= cap);
        Ok(FrameStep { reward, terminal, truncated: self.truncated })
    }

    fn is_done(&self) -> bool {
        self.truncated || self.spec.terminal[self.state]
    }

    fn observe(&self) -> Observation {
        let mut data = vec![0.0; self.spec.state_count];
        data[self.state] = 1.0;
        Tensor::new(self.observation_shape(), data).expect("shape matches")
    }

    fn state_key(&self) -> u64 {
        self.state as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> MdpSpec {
        chain_persist(&ChainPersistParams::default()).unwrap()
    }

    #[test]
    fn chain_step_examples() {
        let spec = chain();
        assert_eq!(mdp_env_step(&spec, 0, ADVANCE).unwrap(), (1, 0.1, false));
        assert_eq!(mdp_env_step(&spec, 7, ADVANCE).unwrap(), (8, -1.0, false));
        assert_eq!(mdp_env_step(&spec, 7, DODGE).unwrap(), (8, 0.1, false));
        assert_eq!(mdp_env_step(&spec, 3, DODGE).unwrap(), (4, -0.1, false));
        let (next, reward, terminal) = mdp_env_step(&spec, 23, ADVANCE).unwrap();
        assert_eq!(next, 24);
        assert!((reward - 1.1).abs() < 1e-15);
        assert!(terminal);
        assert_eq!(mdp_env_step(&spec, 24, ADVANCE), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn chain_rejects_bad_hazards() {
        let p = ChainPersistParams { hazards: vec![24], ..Default::default() };
        assert!(chain_persist(&p).is_err());
        let p = ChainPersistParams { hazards: vec![0], ..Default::default() };
        assert!(chain_persist(&p).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(MdpSpec::new(2, 1, vec![0], vec![0.0, 0.0], vec![false, false], 0).is_err());
        assert!(MdpSpec::new(2, 1, vec![0, 5], vec![0.0, 0.0], vec![false, false], 0).is_err());
        assert!(MdpSpec::new(2, 1, vec![0, 1], vec![f64::NAN, 0.0], vec![false, false], 0).is_err());
        assert!(MdpSpec::new(2, 1, vec![1, 1], vec![1.0, 0.0], vec![true, false], 0).is_err());
        let spec = MdpSpec::new(2, 1, vec![1, 0], vec![1.0, 5.0], vec![false, true], 0).unwrap();
        // terminal rows absorb
        assert_eq!(spec.next_state(1, 0), 1);
        assert_eq!(spec.reward(1, 0), 0.0);
    }

    #[test]
    fn env_runs_chain_and_truncates() {
        let mut env = MdpEnv::new(chain(), Some(5));
        env.reset(0);
        for i in 0..5 {
            assert!(!env.is_done());
            let step = env.step(ADVANCE).unwrap();
            assert!(!step.terminal);
            assert_eq!(step.truncated, i == 4);
        }
        assert!(env.is_done());
        assert_eq!(env.step(ADVANCE), Err(EnvError::EpisodeOver));
        env.reset(1);
        assert_eq!(env.state(), 0);
        assert_eq!(env.observe().data()[0], 1.0);
        assert_eq!(env.observe().shape().dims(), &[1, 25, 1]);
    }

    #[test]
    fn small_mdps() {
        let s = self_loop(1.0);
        assert_eq!(mdp_env_step(&s, 0, 0).unwrap(), (0, 1.0, false));
        let c = two_state_chain(1.0);
        assert_eq!(mdp_env_step(&c, 0, 0).unwrap(), (1, 0.0, false));
        assert_eq!(mdp_env_step(&c, 1, 0).unwrap(), (2, 1.0, true));
    }
}
