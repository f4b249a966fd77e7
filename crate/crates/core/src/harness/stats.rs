use std::fmt::Write as _;

use super::runner::{agent_from_checkpoint, evaluate, PolicyRun};
use super::{HarnessError, RunConfig};
use crate::checkpoint::Checkpoint;
use crate::frameskip::ExtendedActionSpace;

/// Action usage of a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub space: ExtendedActionSpace,
    /// Share of long actions among decisions of completed episodes.
    pub long_action_frac: f64,
    /// Decisions per extended action index, over every decision taken.
    pub histogram: Vec<u64>,
    pub episodes: usize,
    pub decisions: u64,
    pub avg_score: f64,
}

impl StatsReport {
    pub fn from_run(space: ExtendedActionSpace, run: &PolicyRun) -> Self {
        Self {
            space,
            long_action_frac: run.long_action_frac(),
            histogram: run.histogram.clone(),
            episodes: run.episodes.len(),
            decisions: run.decisions,
            avg_score: run.avg_score(),
        }
    }

    /// `action,basis,repeat,count,share` rows.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("action,basis,repeat,count,share\n");
        let total = self.histogram.iter().sum::<u64>().max(1) as f64;
        for (a, &n) in self.space.actions().zip(&self.histogram) {
            let _ = writeln!(out, "{},{},{},{},{}", a.index(), a.basis(), a.repeat(), n, n as f64 / total);
        }
        out
    }
}

/// Play the checkpoint's greedy policy with `eps_test` exploration for
/// `steps` decisions on `cfg.env`. Nothing is learned.
pub fn stats_run(ckpt: &Checkpoint, cfg: &RunConfig, steps: u64) -> Result<StatsReport, HarnessError> {
    let agent = agent_from_checkpoint(ckpt, cfg)?;
    // stream 0 is training's; u64::MAX keeps stats runs apart from test epochs
    let run = evaluate(&agent, cfg, steps, cfg.agent.eps_test, u64::MAX)?;
    Ok(StatsReport::from_run(agent.space, &run))
}
