use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Backend, HarnessError, RunConfig};
use crate::agent::{epsilon_greedy, Agent, QFunction, QTable};
use crate::checkpoint::{Checkpoint, RngState};
use crate::envs::{Environment, FrameStack, StackedState};
use crate::frameskip::{execute_repeated, ExtendedAction, ExtendedActionSpace};
use crate::nn::build_network;
use crate::replay::{ReplayBuffer, Transition};

/// Results of one testing epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean score of the episodes completed inside the epoch; NaN if none.
    pub avg_score: f64,
    pub episodes: usize,
    /// Mean of `Q(s, k)` over every visited state and every extended action.
    pub avg_q: f64,
    /// Share of long actions among decisions of completed episodes.
    pub long_action_frac: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,avg_score,episodes,avg_q,long_action_frac,seconds";

impl EpochReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.avg_score, self.episodes, self.avg_q, self.long_action_frac, self.seconds
        )
    }
}

/// Plain sum of unclipped rewards.
pub fn episode_score(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// Report with the highest average score, earliest on ties. Epochs without
/// a completed episode never win against ones with a score.
pub fn best_epoch(reports: &[EpochReport]) -> Result<&EpochReport, HarnessError> {
    let mut best: Option<&EpochReport> = None;
    for r in reports {
        match best {
            None => best = Some(r),
            Some(b) if r.avg_score > b.avg_score || (b.avg_score.is_nan() && !r.avg_score.is_nan()) => best = Some(r),
            _ => {}
        }
    }
    best.ok_or(HarnessError::NoReports)
}

/// One line of `trajectory.txt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub step: u64,
    /// State key before the decision.
    pub digest: u64,
    pub action: usize,
    pub basis: usize,
    pub repeat: u32,
    pub reward: f64,
    pub terminal: bool,
}

impl fmt::Display for DecisionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:016x} {} {} {} {} {}",
            self.step, self.digest, self.action, self.basis, self.repeat, self.reward, self.terminal as u8
        )
    }
}

impl std::str::FromStr for DecisionRecord {
    type Err = HarnessError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Trajectory(line.to_string());
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            digest: u64::from_str_radix(f[1], 16).map_err(|_| bad())?,
            action: f[2].parse().map_err(|_| bad())?,
            basis: f[3].parse().map_err(|_| bad())?,
            repeat: f[4].parse().map_err(|_| bad())?,
            reward: f[5].parse().map_err(|_| bad())?,
            terminal: match f[6] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
        })
    }
}

pub fn parse_trajectory(text: &str) -> Result<Vec<DecisionRecord>, HarnessError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// Deterministic per-episode environment seed.
fn episode_seed(run_seed: u64, stream: u64, n: u64) -> u64 {
    // splitmix64 finalizer over the combined counters
    let mut z = run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(n);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_STREAM: u64 = 0;

/// Fresh online Q-function for `cfg`.
pub fn initial_qfunction(cfg: &RunConfig, space: &ExtendedActionSpace) -> Result<QFunction, HarnessError> {
    Ok(match cfg.backend {
        Backend::Tabular => QFunction::Tabular(QTable::new(space.len())),
        Backend::Dense | Backend::Conv => QFunction::Network(build_network(
            &cfg.backend.layers(cfg.hidden_units),
            &cfg.input_shape(),
            space.len(),
            cfg.seed,
        )?),
    })
}

/// A completed (terminal or truncated) episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub score: f64,
    pub actions: Vec<ExtendedAction>,
    pub truncated: bool,
}

/// Everything observed while running a fixed policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyRun {
    pub episodes: Vec<EpisodeRecord>,
    pub decisions: u64,
    /// Decisions per extended action index, including unfinished episodes.
    pub histogram: Vec<u64>,
    pub q_sum: f64,
    pub q_count: u64,
}

impl PolicyRun {
    pub fn avg_score(&self) -> f64 {
        if self.episodes.is_empty() {
            return f64::NAN;
        }
        self.episodes.iter().map(|e| e.score).sum::<f64>() / self.episodes.len() as f64
    }

    /// Long decisions over all decisions of completed episodes.
    pub fn long_action_frac(&self) -> f64 {
        let (long, total) = self
            .episodes
            .iter()
            .flat_map(|e| &e.actions)
            .fold((0u64, 0u64), |(l, t), a| (l + a.is_long() as u64, t + 1));
        if total == 0 {
            f64::NAN
        } else {
            long as f64 / total as f64
        }
    }

    pub fn avg_q(&self) -> f64 {
        if self.q_count == 0 {
            f64::NAN
        } else {
            self.q_sum / self.q_count as f64
        }
    }
}

/// Run `policy` for exactly `steps` decisions, starting a new episode
/// whenever one ends. `policy` returns the chosen action and, optionally,
/// the Q-values it saw. An episode still running at the end is dropped
/// from `episodes`.
pub fn run_policy<E, P>(
    env: &mut E,
    space: &ExtendedActionSpace,
    steps: u64,
    mut episode_seed: impl FnMut(u64) -> u64,
    mut policy: P,
) -> Result<PolicyRun, HarnessError>
where
    E: Environment + ?Sized,
    P: FnMut(&StackedState) -> Result<(ExtendedAction, Option<Vec<f64>>), HarnessError>,
{
    if env.basis_action_count() != space.basis_count() {
        return Err(HarnessError::Incompatible(format!(
            "environment has {} basis actions, action space {}",
            env.basis_action_count(),
            space.basis_count()
        )));
    }
    let mut run = PolicyRun { histogram: vec![0; space.len()], ..Default::default() };
    let mut stack = FrameStack::new();
    let mut current: Option<(StackedState, EpisodeRecord)> = None;
    let mut started = 0u64;
    for _ in 0..steps {
        let (state, mut episode) = match current.take() {
            Some(c) => c,
            None => {
                env.reset(episode_seed(started));
                started += 1;
                let s = stack.reset(env.observe(), env.state_key());
                (s, EpisodeRecord { score: 0.0, actions: Vec::new(), truncated: false })
            }
        };
        let (action, values) = policy(&state)?;
        if let Some(v) = values {
            run.q_sum += v.iter().sum::<f64>();
            run.q_count += v.len() as u64;
        }
        let out = execute_repeated(env, action.basis(), action.repeat())?;
        run.decisions += 1;
        run.histogram[action.index()] += 1;
        episode.score += episode_score(&out.frame_rewards);
        episode.actions.push(action);
        if out.terminal || out.truncated {
            episode.truncated = out.truncated && !out.terminal;
            run.episodes.push(episode);
        } else {
            let next = stack.push(out.observation, env.state_key());
            current = Some((next, episode));
        }
    }
    Ok(run)
}

/// Evaluate `agent` with epsilon-greedy exploration at `eps`. Never
/// modifies the agent.
pub fn evaluate(
    agent: &Agent,
    cfg: &RunConfig,
    steps: u64,
    eps: f64,
    stream: u64,
) -> Result<PolicyRun, HarnessError> {
    let mut env = cfg.env.build(cfg.max_episode_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let seed = cfg.seed;
    run_policy(&mut env, &agent.space, steps, |n| episode_seed(seed, stream, n), |state| {
        let values = agent.online.values(state)?;
        let k = epsilon_greedy(|| values.clone(), agent.space.len(), eps, &mut rng);
        Ok((agent.space.action(k)?, Some(values)))
    })
}

/// Training/testing epoch loop for one run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub agent: Agent,
    pub replay: ReplayBuffer,
    env: Box<dyn Environment + Send>,
    rng: ChaCha8Rng,
    train_episodes: u64,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let env = cfg.env.build(cfg.max_episode_frames);
        let space = cfg.skip.space(env.basis_action_count())?;
        let online = initial_qfunction(&cfg, &space)?;
        let agent = Agent::new(space, cfg.agent, cfg.optimizer, online)?;
        let replay = ReplayBuffer::new(cfg.replay_capacity)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, agent, replay, env, rng, train_episodes: 0, epochs_done: 0 })
    }

    /// Exactly `train_epoch_steps` decisions with annealed epsilon and a
    /// learning step after each one. Starts from a fresh episode.
    pub fn train_epoch(&mut self) -> Result<Vec<DecisionRecord>, HarnessError> {
        let agent = &mut self.agent;
        let replay = &mut self.replay;
        let rng = &mut self.rng;
        let seed = self.cfg.seed;
        let base = self.train_episodes;
        let mut records = Vec::with_capacity(self.cfg.train_epoch_steps as usize);
        let mut stack = FrameStack::new();
        let mut state: Option<StackedState> = None;
        let mut started = 0u64;
        let env = &mut self.env;

        for _ in 0..self.cfg.train_epoch_steps {
            let s = match state.take() {
                Some(s) => s,
                None => {
                    env.reset(episode_seed(seed, TRAIN_STREAM, base + started));
                    started += 1;
                    stack.reset(env.observe(), env.state_key())
                }
            };
            let action = agent.act(&s, agent.epsilon(), rng)?;
            let out = execute_repeated(env, action.basis(), action.repeat())?;
            let next = stack.push(out.observation, env.state_key());
            records.push(DecisionRecord {
                step: agent.step,
                digest: s.key,
                action: action.index(),
                basis: action.basis(),
                repeat: action.repeat(),
                reward: out.reward,
                terminal: out.terminal,
            });
            replay.push(Transition {
                state: s,
                action,
                reward: out.reward,
                frame_rewards: out.frame_rewards,
                next_state: next.clone(),
                terminal: out.terminal,
            });
            agent.learn(replay, rng)?;
            agent.advance();
            if !(out.terminal || out.truncated) {
                state = Some(next);
            }
        }
        self.train_episodes += started;
        Ok(records)
    }

    /// `test_epoch_steps` decisions at `eps_test` without learning.
    pub fn test_epoch(&self) -> Result<EpochReport, HarnessError> {
        let epoch = self.epochs_done + 1;
        let run = evaluate(&self.agent, &self.cfg, self.cfg.test_epoch_steps, self.cfg.agent.eps_test, epoch as u64)?;
        Ok(EpochReport {
            epoch,
            avg_score: run.avg_score(),
            episodes: run.episodes.len(),
            avg_q: run.avg_q(),
            long_action_frac: run.long_action_frac(),
            seconds: 0.0,
        })
    }

    /// One training epoch followed by one testing epoch.
    pub fn run_epoch(&mut self) -> Result<(EpochReport, Vec<DecisionRecord>), HarnessError> {
        let start = Instant::now();
        let records = self.train_epoch()?;
        let mut report = self.test_epoch()?;
        self.epochs_done += 1;
        if self.cfg.record_wall_clock {
            report.seconds = start.elapsed().as_secs_f64();
        }
        Ok((report, records))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            space: self.agent.space,
            step: self.agent.step,
            rng: Some(RngState::capture(&self.rng)),
            online: self.agent.online.clone(),
            target: self.agent.target.clone(),
        }
    }
}

/// Agent restored from a checkpoint, with learning settings from `cfg`.
pub fn agent_from_checkpoint(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<Agent, HarnessError> {
    let basis = cfg.env.build(cfg.max_episode_frames).basis_action_count();
    if ckpt.space.basis_count() != basis {
        return Err(HarnessError::Incompatible(format!(
            "checkpoint has {} basis actions, {} has {basis}",
            ckpt.space.basis_count(),
            cfg.env
        )));
    }
    if let QFunction::Network(net) = &ckpt.online {
        let want = cfg.input_shape();
        if net.input_shape() != &want {
            return Err(HarnessError::Incompatible(format!(
                "checkpoint expects input {}, {} produces {want}",
                net.input_shape(),
                cfg.env
            )));
        }
    }
    let mut agent = Agent::new(ckpt.space, cfg.agent, cfg.optimizer, ckpt.online.clone())?;
    agent.target = ckpt.target.clone();
    agent.step = ckpt.step;
    Ok(agent)
}

/// Run the full protocol and write `metrics.csv`, `trajectory.txt`,
/// `checkpoint.bin` (latest) and `best_checkpoint.bin` into `cfg.out`.
pub fn run_training(cfg: &RunConfig) -> Result<Vec<EpochReport>, HarnessError> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let mut metrics = BufWriter::new(fs::File::create(out.join("metrics.csv"))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut trajectory = BufWriter::new(fs::File::create(out.join("trajectory.txt"))?);

    let mut reports: Vec<EpochReport> = Vec::with_capacity(cfg.epoch_count);
    for _ in 0..cfg.epoch_count {
        let (report, records) = trainer.run_epoch()?;
        for r in &records {
            writeln!(trajectory, "{r}")?;
        }
        writeln!(metrics, "{}", report.csv_row())?;
        let ckpt = trainer.checkpoint();
        ckpt.save(&out.join("checkpoint.bin"))?;
        let improved = best_epoch(&reports).map_or(true, |b| {
            report.avg_score > b.avg_score || (b.avg_score.is_nan() && !report.avg_score.is_nan())
        });
        if improved {
            ckpt.save(&out.join("best_checkpoint.bin"))?;
        }
        reports.push(report);
    }
    metrics.flush()?;
    trajectory.flush()?;
    Ok(reports)
}

/// Read back a `metrics.csv` written by [`run_training`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochReport>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(HarnessError::Metrics("missing header".into()));
    }
    lines
        .map(|line| {
            let bad = || HarnessError::Metrics(line.to_string());
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochReport {
                epoch: f[0].parse().map_err(|_| bad())?,
                avg_score: num(f[1])?,
                episodes: f[2].parse().map_err(|_| bad())?,
                avg_q: num(f[3])?,
                long_action_frac: num(f[4])?,
                seconds: num(f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(epoch: usize, avg_score: f64) -> EpochReport {
        EpochReport { epoch, avg_score, episodes: 1, avg_q: 0.0, long_action_frac: 0.0, seconds: 0.0 }
    }

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::parse_str(
            "env = chain_persist\nr1 = 1\nr2 = 6\nbackend = tabular\noptimizer = sgd\nlearning_rate = 0.2\n\
             eps_anneal_steps = 500\nlearn_start = 32\ntrain_epoch_steps = 300\ntest_epoch_steps = 100\n\
             epoch_count = 2\nreplay_capacity = 1000\ntarget_sync_interval = 50",
        )
        .unwrap();
        cfg.out = std::path::PathBuf::new();
        cfg
    }

    #[test]
    fn episode_scores() {
        assert_eq!(episode_score(&[1.0, -1.0, 2.0]), 2.0);
        assert_eq!(episode_score(&[]), 0.0);
    }

    #[test]
    fn best_epoch_examples() {
        let r = [report(1, 5.0), report(2, 10.0), report(3, 3.0)];
        assert_eq!(best_epoch(&r).unwrap().epoch, 2);
        assert_eq!(best_epoch(&[report(1, 7.0), report(2, 7.0)]).unwrap().epoch, 1);
        assert_eq!(best_epoch(&[report(1, -2.0)]).unwrap().epoch, 1);
        assert_eq!(best_epoch(&[report(1, f64::NAN), report(2, -1.0)]).unwrap().epoch, 2);
        assert!(best_epoch(&[]).is_err());
    }

    #[test]
    fn trajectory_line_round_trip() {
        let rec = DecisionRecord { step: 12, digest: 0xabc, action: 3, basis: 1, repeat: 6, reward: -0.5, terminal: true };
        let line = rec.to_string();
        assert_eq!(line, "12 0000000000000abc 3 1 6 -0.5 1");
        assert_eq!(line.parse::<DecisionRecord>().unwrap(), rec);
        assert!("1 2 3".parse::<DecisionRecord>().is_err());
    }

    #[test]
    fn training_epoch_counts_decisions() {
        let mut t = Trainer::new(small_cfg()).unwrap();
        let records = t.train_epoch().unwrap();
        assert_eq!(records.len(), 300);
        assert_eq!(t.agent.step, 300);
        assert_eq!(t.replay.len(), 300);
        assert!(records.windows(2).all(|w| w[1].step == w[0].step + 1));
    }

    #[test]
    fn testing_epoch_leaves_agent_untouched() {
        let mut t = Trainer::new(small_cfg()).unwrap();
        t.train_epoch().unwrap();
        let before = t.checkpoint().to_bytes();
        let report = t.test_epoch().unwrap();
        assert_eq!(t.checkpoint().to_bytes(), before);
        assert!(report.episodes > 0);
    }

    #[test]
    fn straddling_episode_is_excluded() {
        let cfg = small_cfg();
        let space = cfg.skip.space(2).unwrap();
        let mut env = cfg.env.build(1000);
        // always short advance: 24 decisions per episode
        let run = run_policy(&mut env, &space, 50, |n| n, |_| Ok((space.action(0).unwrap(), None))).unwrap();
        assert_eq!(run.episodes.len(), 2);
        assert_eq!(run.decisions, 50);
        assert_eq!(run.histogram[0], 50);
        assert_eq!(run.long_action_frac(), 0.0);
    }

    #[test]
    fn zero_epochs_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.epoch_count = 0;
        cfg.out = dir.path().to_path_buf();
        assert!(run_training(&cfg).unwrap().is_empty());
        assert!(read_metrics(&dir.path().join("metrics.csv")).unwrap().is_empty());
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.out = dir.path().to_path_buf();
        let reports = run_training(&cfg).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), reports);
        let traj = parse_trajectory(&fs::read_to_string(dir.path().join("trajectory.txt")).unwrap()).unwrap();
        assert_eq!(traj.len(), 600);
        let ckpt = Checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(ckpt.step, 600);
        assert!(dir.path().join("best_checkpoint.bin").exists());
    }

    #[test]
    fn resumed_agent_matches_checkpoint() {
        let mut t = Trainer::new(small_cfg()).unwrap();
        t.train_epoch().unwrap();
        let ckpt = t.checkpoint();
        let agent = agent_from_checkpoint(&ckpt, &t.cfg).unwrap();
        assert_eq!(agent, t.agent);
        let mut other = small_cfg();
        other.env = crate::envs::EnvId::ToyDiver;
        assert!(agent_from_checkpoint(&ckpt, &other).is_err());
    }
}
