use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::runner::{best_epoch, run_training};
use super::{HarnessError, RunConfig};

/// Best scores of one config across its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Best testing-epoch average score per seed.
    pub best_scores: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub const COMPARE_HEADER: &str = "label,seeds,mean_best,min_best,max_best";

impl CompareRow {
    fn new(label: String, seeds: Vec<u64>, best_scores: Vec<f64>) -> Self {
        let n = best_scores.len() as f64;
        let mean = best_scores.iter().sum::<f64>() / n;
        let min = best_scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = best_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { label, seeds, best_scores, mean, min, max }
    }
}

/// Train every config for seeds `seed .. seed + seed_count`, all runs in
/// parallel, each in `root/<index>-<label>/seed-<seed>`. Rows follow input
/// order; `compare.csv` is written to `root`.
pub fn compare_runs(cfgs: &[RunConfig], root: &Path) -> Result<Vec<CompareRow>, HarnessError> {
    if cfgs.len() < 2 {
        return Err(HarnessError::TooFewConfigs(cfgs.len()));
    }
    for cfg in cfgs {
        cfg.validate()?;
    }
    let mut jobs = Vec::new();
    for (i, cfg) in cfgs.iter().enumerate() {
        for seed in cfg.seed..cfg.seed + cfg.seed_count {
            let mut run = cfg.clone();
            run.seed = seed;
            run.out = root.join(format!("{i}-{}", cfg.label())).join(format!("seed-{seed}"));
            jobs.push((i, run));
        }
    }
    let results: Vec<Result<f64, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, run)| scope.spawn(move || run_training(run).and_then(|r| Ok(best_epoch(&r)?.avg_score))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });

    let mut rows: Vec<CompareRow> = Vec::with_capacity(cfgs.len());
    for (i, cfg) in cfgs.iter().enumerate() {
        let (mut seeds, mut scores) = (Vec::new(), Vec::new());
        for ((j, run), res) in jobs.iter().zip(&results) {
            if *j == i {
                seeds.push(run.seed);
                scores.push(match res {
                    Ok(s) => *s,
                    Err(e) => return Err(HarnessError::Run { label: cfg.label(), seed: run.seed, reason: e.to_string() }),
                });
            }
        }
        rows.push(CompareRow::new(cfg.label(), seeds, scores));
    }

    let mut csv = format!("{COMPARE_HEADER}\n");
    for r in &rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(csv, "{},{},{},{},{}", r.label, seeds.join(" "), r.mean, r.min, r.max);
    }
    fs::create_dir_all(root)?;
    fs::write(root.join("compare.csv"), csv)?;
    Ok(rows)
}
