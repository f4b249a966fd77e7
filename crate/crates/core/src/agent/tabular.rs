use std::collections::BTreeMap;

use rand::Rng;

use super::{epsilon_at, epsilon_greedy, greedy_index, AgentConfig, AgentError, DiscountMode, QTable};
use crate::envs::{Environment, MdpEnv, MdpSpec};
use crate::frameskip::{execute_repeated, ExtendedAction, ExtendedActionSpace};

/// Step size for online tabular updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    Constant(f64),
    /// `1 / n^power` where `n` counts updates of the `(state, action)` pair.
    /// Converges for `power` in `(0.5, 1]`.
    Polynomial { power: f64 },
    /// `offset / (offset + n - 1)`: starts at 1 and decays like `offset / n`.
    Harmonic { offset: f64 },
}

impl AlphaSchedule {
    pub fn alpha(&self, visits: u64) -> f64 {
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::Polynomial { power } => (visits.max(1) as f64).powf(-power),
            AlphaSchedule::Harmonic { offset } => offset / (offset + visits.max(1) as f64 - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularRun {
    /// Upper bound on episodes.
    pub episodes: usize,
    /// Upper bound on decisions across all episodes.
    pub decision_budget: u64,
    /// Decisions after which an episode is cut off (bootstrapped, not terminal).
    pub episode_decision_cap: u32,
    pub alpha: AlphaSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularOutcome {
    pub table: QTable,
    pub decisions: u64,
    pub episodes: usize,
}

/// Online epsilon-greedy Q-learning over the extended actions of an explicit MDP.
///
/// Each decision plays its basis action through the environment for the
/// action's repeat count and applies
/// `Q(s,k) += alpha * (y - Q(s,k))` immediately, with `y` formed as in
/// [`td_targets`](super::td_targets). Epsilon follows `cfg`'s schedule over
/// the global decision count.
pub fn tabular_q_learning<R: Rng + ?Sized>(
    spec: &MdpSpec,
    space: &ExtendedActionSpace,
    cfg: &AgentConfig,
    run: &TabularRun,
    rng: &mut R,
) -> Result<TabularOutcome, AgentError> {
    cfg.validate()?;
    if space.basis_count() != spec.basis_action_count() {
        return Err(AgentError::ActionCount { got: spec.basis_action_count(), want: space.basis_count() });
    }
    let mut table = QTable::new(space.len());
    let mut visits: BTreeMap<(u64, usize), u64> = BTreeMap::new();
    let mut env = MdpEnv::new(spec.clone(), None);
    let mut decisions = 0u64;
    let mut episodes = 0;

    while episodes < run.episodes && decisions < run.decision_budget {
        env.reset(episodes as u64);
        episodes += 1;
        let mut in_episode = 0;
        while !env.is_done() && in_episode < run.episode_decision_cap && decisions < run.decision_budget {
            let key = env.state_key();
            let eps = epsilon_at(cfg, decisions);
            let k = epsilon_greedy(|| table.row(key), space.len(), eps, rng);
            let action = space.action(k).expect("index in range");
            let outcome = execute_repeated(&mut env, action.basis(), action.repeat())?;

            let (reward, discount) = match cfg.discount_mode {
                DiscountMode::PerDecision => (outcome.reward, cfg.gamma),
                DiscountMode::PerFrame => outcome
                    .frame_rewards
                    .iter()
                    .fold((0.0, 1.0), |(sum, w), &r| (sum + w * r, w * cfg.gamma)),
            };
            let next_key = env.state_key();
            let y = if outcome.terminal {
                reward
            } else {
                reward + discount * table.row(next_key).into_iter().fold(f64::NEG_INFINITY, f64::max)
            };
            let n = visits.entry((key, k)).or_insert(0);
            *n += 1;
            let alpha = run.alpha.alpha(*n);
            let q = &mut table.row_mut(key)[k];
            *q += alpha * (y - *q);

            decisions += 1;
            in_episode += 1;
        }
    }
    Ok(TabularOutcome { table, decisions, episodes })
}

/// Play one greedy episode from the start state. Returns the undiscounted
/// score and the decisions taken.
pub fn greedy_episode(
    spec: &MdpSpec,
    space: &ExtendedActionSpace,
    table: &QTable,
    max_decisions: u32,
) -> Result<(f64, Vec<ExtendedAction>), AgentError> {
    let mut env = MdpEnv::new(spec.clone(), None);
    env.reset(0);
    let mut score = 0.0;
    let mut taken = Vec::new();
    while !env.is_done() && taken.len() < max_decisions as usize {
        let action = space.action(greedy_index(&table.row(env.state_key()))).expect("index in range");
        score += execute_repeated(&mut env, action.basis(), action.repeat())?.reward;
        taken.push(action);
    }
    Ok((score, taken))
}
