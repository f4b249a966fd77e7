//! Run configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment. Keys mirror [`RunConfig`]
//! field names; unknown or repeated keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{AgentConfig, DiscountMode};
use crate::envs::{stacked_shape, EnvId};
use crate::frameskip::ExtendedActionSpace;
use crate::nn::{ClipMode, LayerSpec, OptimizerConfig, OptimizerKind, TensorShape};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("key '{0}' given twice")]
    Duplicate(String),
    #[error("bad value for '{key}': '{value}'")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

/// How many frames each decision repeats its basis action for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    /// Short (`r1`) and long (`r2`) variants of every action.
    Dynamic { r1: u32, r2: u32 },
    /// Fixed repeat; represented as an extended space with `r1 == r2`.
    Static(u32),
}

impl SkipMode {
    pub fn space(&self, basis_count: usize) -> Result<ExtendedActionSpace, ConfigError> {
        let res = match *self {
            SkipMode::Dynamic { r1, r2 } => ExtendedActionSpace::new(basis_count, r1, r2),
            SkipMode::Static(r) => ExtendedActionSpace::static_skip(basis_count, r),
        };
        res.map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipMode::Dynamic { r1, r2 } => write!(f, "D{r1}-{r2}"),
            SkipMode::Static(r) => write!(f, "S{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Tabular,
    Dense,
    Conv,
}

impl Backend {
    /// Hidden layers for network backends; the output layer is added by
    /// [`build_network`](crate::nn::build_network).
    pub fn layers(&self, hidden_units: usize) -> Vec<LayerSpec> {
        match self {
            Backend::Tabular => Vec::new(),
            Backend::Dense => vec![LayerSpec::Dense { units: hidden_units }, LayerSpec::Rectifier],
            Backend::Conv => vec![
                LayerSpec::Conv { filters: 16, size: 3, stride: 1 },
                LayerSpec::Rectifier,
                LayerSpec::Dense { units: hidden_units },
                LayerSpec::Rectifier,
            ],
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Tabular => "tabular",
            Backend::Dense => "dense",
            Backend::Conv => "conv",
        })
    }
}

impl FromStr for Backend {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabular" => Ok(Backend::Tabular),
            "dense" => Ok(Backend::Dense),
            "conv" => Ok(Backend::Conv),
            _ => Err(ConfigError::BadValue { key: "backend".into(), value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label: Option<String>,
    pub env: EnvId,
    pub skip: SkipMode,
    pub agent: AgentConfig,
    pub optimizer: OptimizerConfig,
    pub backend: Backend,
    pub hidden_units: usize,
    pub replay_capacity: usize,
    /// Decisions per training epoch.
    pub train_epoch_steps: u64,
    /// Decisions per testing epoch.
    pub test_epoch_steps: u64,
    pub epoch_count: usize,
    pub seed: u64,
    /// `compare` runs seeds `seed .. seed + seed_count`.
    pub seed_count: u64,
    pub max_episode_frames: u32,
    /// Write measured epoch durations to `metrics.csv`; zero otherwise so
    /// repeated runs produce identical files.
    pub record_wall_clock: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: None,
            env: EnvId::ChainPersist,
            skip: SkipMode::Dynamic { r1: 4, r2: 20 },
            agent: AgentConfig::default(),
            optimizer: OptimizerConfig::default(),
            backend: Backend::Dense,
            hidden_units: 64,
            replay_capacity: 10_000,
            train_epoch_steps: 5_000,
            test_epoch_steps: 2_500,
            epoch_count: 10,
            seed: 0,
            seed_count: 1,
            max_episode_frames: 1_000,
            record_wall_clock: false,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// Keys accepted in config files.
pub const CONFIG_KEYS: &[&str] = &[
    "label",
    "env",
    "r1",
    "r2",
    "static_skip",
    "backend",
    "hidden_units",
    "gamma",
    "eps_start",
    "eps_end",
    "eps_anneal_steps",
    "batch_size",
    "learn_start",
    "target_sync_interval",
    "eps_test",
    "discount_mode",
    "reward_clip",
    "optimizer",
    "learning_rate",
    "rms_decay",
    "rms_epsilon",
    "clip_mode",
    "clip_value",
    "replay_capacity",
    "train_epoch_steps",
    "test_epoch_steps",
    "epoch_count",
    "seed",
    "seed_count",
    "max_episode_frames",
    "record_wall_clock",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, reason: format!("expected key = value, got '{line}'") });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate(key.into()));
            }
            cfg.set(key, value)?;
            seen.push(key.into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let a = &mut self.agent;
        let o = &mut self.optimizer;
        match key {
            "label" => self.label = Some(value.to_string()),
            "env" => self.env = value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })?,
            "r1" | "r2" => {
                let r: u32 = parse(key, value)?;
                let (mut r1, mut r2) = match self.skip {
                    SkipMode::Dynamic { r1, r2 } => (r1, r2),
                    SkipMode::Static(s) => (s, s),
                };
                if key == "r1" {
                    r1 = r;
                } else {
                    r2 = r;
                }
                self.skip = SkipMode::Dynamic { r1, r2 };
            }
            "static_skip" => self.skip = SkipMode::Static(parse(key, value)?),
            "backend" => self.backend = value.parse()?,
            "hidden_units" => self.hidden_units = parse(key, value)?,
            "gamma" => a.gamma = parse(key, value)?,
            "eps_start" => a.eps_start = parse(key, value)?,
            "eps_end" => a.eps_end = parse(key, value)?,
            "eps_anneal_steps" => a.eps_anneal_steps = parse(key, value)?,
            "batch_size" => a.batch_size = parse(key, value)?,
            "learn_start" => a.learn_start = parse(key, value)?,
            "target_sync_interval" => a.target_sync_interval = parse(key, value)?,
            "eps_test" => a.eps_test = parse(key, value)?,
            "discount_mode" => {
                a.discount_mode = match value {
                    "per_decision" => DiscountMode::PerDecision,
                    "per_frame" => DiscountMode::PerFrame,
                    _ => return Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
                }
            }
            "reward_clip" => a.reward_clip = parse(key, value)?,
            "optimizer" => {
                o.kind = match value {
                    "rmsprop" => OptimizerKind::RmsProp,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
                }
            }
            "learning_rate" => o.learning_rate = parse(key, value)?,
            "rms_decay" => o.decay = parse(key, value)?,
            "rms_epsilon" => o.epsilon = parse(key, value)?,
            "clip_mode" => {
                o.clip_mode = match value {
                    "td_error" => ClipMode::TdError,
                    "global_norm" => ClipMode::GlobalNorm,
                    _ => return Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
                }
            }
            "clip_value" => o.clip_value = parse(key, value)?,
            "replay_capacity" => self.replay_capacity = parse(key, value)?,
            "train_epoch_steps" => self.train_epoch_steps = parse(key, value)?,
            "test_epoch_steps" => self.test_epoch_steps = parse(key, value)?,
            "epoch_count" => self.epoch_count = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "seed_count" => self.seed_count = parse(key, value)?,
            "max_episode_frames" => self.max_episode_frames = parse(key, value)?,
            "record_wall_clock" => self.record_wall_clock = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.agent.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.optimizer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.skip.space(1)?;
        if self.train_epoch_steps == 0 || self.test_epoch_steps == 0 {
            return invalid("epoch step counts must be positive".into());
        }
        if self.replay_capacity == 0 || self.seed_count == 0 || self.max_episode_frames == 0 {
            return invalid("replay_capacity, seed_count and max_episode_frames must be positive".into());
        }
        if self.backend != Backend::Tabular && self.hidden_units == 0 {
            return invalid("hidden_units must be positive".into());
        }
        if self.replay_capacity < self.agent.batch_size {
            return invalid("replay_capacity smaller than batch_size".into());
        }
        // network geometry must fit the environment
        if self.backend != Backend::Tabular {
            let input = self.input_shape();
            crate::nn::plan_layers(&self.backend.layers(self.hidden_units), &input)
                .map_err(|e| ConfigError::Invalid(format!("{} backend on {}: {e}", self.backend, self.env)))?;
        }
        Ok(())
    }

    /// Stacked observation shape fed to network backends.
    pub fn input_shape(&self) -> TensorShape {
        stacked_shape(&self.env.build(self.max_episode_frames).observation_shape())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}-{}-{}", self.env, self.skip, self.backend))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let text = "# desk config\nenv = chain_persist\nr1 = 1\nr2 = 6  # long\nbackend = tabular\n\
                    gamma = 0.99\nlearning_rate = 0.5\noptimizer = sgd\ndiscount_mode = per_frame\nseed = 7\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.skip, SkipMode::Dynamic { r1: 1, r2: 6 });
        assert_eq!(cfg.backend, Backend::Tabular);
        assert_eq!(cfg.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(cfg.agent.discount_mode, DiscountMode::PerFrame);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.label(), "chain_persist-D1-6-tabular");
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(matches!(RunConfig::parse_str("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse_str("seed = 1\nseed = 2"), Err(ConfigError::Duplicate(_))));
        assert!(matches!(RunConfig::parse_str("seed"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse_str("seed = x"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn static_skip_mode() {
        let cfg = RunConfig::parse_str("static_skip = 4\nbackend = tabular").unwrap();
        assert_eq!(cfg.skip, SkipMode::Static(4));
        let space = cfg.skip.space(2).unwrap();
        assert_eq!((space.r1(), space.r2(), space.len()), (4, 4, 4));
    }

    #[test]
    fn validation_catches_bad_geometry() {
        // a 3x3 conv cannot run on the 1-row chain observation
        let err = RunConfig::parse_str("backend = conv\nenv = chain_persist").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(RunConfig::parse_str("backend = conv\nenv = toy_diver").is_ok());
        assert!(RunConfig::parse_str("train_epoch_steps = 0").is_err());
        assert!(RunConfig::parse_str("static_skip = 0").is_err());
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let mut cfg = RunConfig::default();
        for key in CONFIG_KEYS {
            let value = match *key {
                "label" => "x",
                "env" => "toy_diver",
                "backend" => "dense",
                "discount_mode" => "per_decision",
                "optimizer" => "rmsprop",
                "clip_mode" => "td_error",
                "reward_clip" | "record_wall_clock" => "false",
                "out" => "runs/x",
                "gamma" | "eps_start" | "eps_end" | "eps_test" | "learning_rate" | "rms_decay" | "rms_epsilon"
                | "clip_value" => "0.5",
                _ => "40",
            };
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
