use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dfdqn::checkpoint::Checkpoint;
use dfdqn::harness::{
    agent_from_checkpoint, best_epoch, compare_runs, evaluate, run_training, stats_run, RunConfig, METRICS_HEADER,
};
use dfdqn::oracle::solve;

#[derive(Parser)]
#[command(name = "dfdqn", version, about = "Dynamic frame-skip Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Alternate training and testing epochs; writes metrics.csv,
    /// trajectory.txt and checkpoints to the output directory.
    Train(Common),
    /// One testing epoch with a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Long-action statistics of a saved checkpoint.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Decisions to play.
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
    },
    /// Exact Q-values of the extended-action MDP; writes qtable.golden.
    Oracle(Common),
    /// Train several configs over their seeds and tabulate best scores.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Config file; repeat for `compare`.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    r1: Option<u32>,
    #[arg(long)]
    r2: Option<u32>,
    #[arg(long)]
    static_skip: Option<u32>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<Vec<RunConfig>> {
        self.config.iter().map(|p| self.load_one(p)).collect()
    }

    fn single(&self) -> Result<RunConfig> {
        if self.config.len() != 1 {
            bail!("expected exactly one --config");
        }
        self.load_one(&self.config[0])
    }

    fn load_one(&self, path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?;
        let overrides = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("epoch_count", self.epochs.map(|v| v.to_string())),
            ("r1", self.r1.map(|v| v.to_string())),
            ("r2", self.r2.map(|v| v.to_string())),
            ("static_skip", self.static_skip.map(|v| v.to_string())),
            ("env", self.env.clone()),
            ("backend", self.backend.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(common) => {
            let cfg = common.single()?;
            let reports = run_training(&cfg)?;
            println!("{METRICS_HEADER}");
            for r in &reports {
                println!("{}", r.csv_row());
            }
            if let Ok(best) = best_epoch(&reports) {
                println!("best epoch {} score {}", best.epoch, best.avg_score);
            }
            println!("outputs in {}", cfg.out.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.single()?;
            let path = checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.bin"));
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let agent = agent_from_checkpoint(&ckpt, &cfg)?;
            let run = evaluate(&agent, &cfg, cfg.test_epoch_steps, cfg.agent.eps_test, 1)?;
            println!("episodes {}", run.episodes.len());
            println!("avg_score {}", run.avg_score());
            println!("avg_q {}", run.avg_q());
            println!("long_action_frac {}", run.long_action_frac());
        }
        Command::Stats { common, checkpoint, steps } => {
            let cfg = common.single()?;
            let path = checkpoint.unwrap_or_else(|| cfg.out.join("checkpoint.bin"));
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let report = stats_run(&ckpt, &cfg, steps)?;
            println!("decisions {} episodes {}", report.decisions, report.episodes);
            println!("long_action_frac {}", report.long_action_frac);
            print!("{}", report.histogram_csv());
        }
        Command::Oracle(common) => {
            let cfg = common.single()?;
            let Some(spec) = cfg.env.mdp_spec() else {
                bail!("{} has no explicit MDP; the oracle needs one", cfg.env);
            };
            let space = cfg.skip.space(spec.basis_action_count())?;
            let result = solve(&spec, &space, cfg.agent.gamma, cfg.agent.discount_mode)?;
            fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join("qtable.golden");
            fs::write(&path, result.to_golden())?;
            println!("converged in {} iterations (residual {:e})", result.iterations, result.residual);
            for s in 0..result.state_count() {
                if let Some(a) = result.greedy(s) {
                    println!("state {s:>3}  V {:>10.6}  greedy {a}", result.v(s));
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Compare(common) => {
            let cfgs = common.load()?;
            let root = common.out.clone().unwrap_or_else(|| PathBuf::from("runs/compare"));
            for row in compare_runs(&cfgs, &root)? {
                println!("{:<32} mean {:>10.4}  min {:>10.4}  max {:>10.4}", row.label, row.mean, row.min, row.max);
            }
            println!("wrote {}", root.join("compare.csv").display());
        }
    }
    Ok(())
}
