//! Experiment driver for the re-basin toolkit: runs seeded trials of the
//! train, find_ot, lmc and continual experiments and writes per-trial rows,
//! aggregates and artifacts.

pub mod config;
pub mod experiments;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::thread;

use anyhow::{Context, Result};
use serde::Serialize;

pub use config::{Experiment, ExperimentConfig, Method, Source};
use experiments::{Shared, Trial};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub method: Option<Method>,
    pub runs: usize,
    pub base_seed: u64,
    pub metrics: BTreeMap<String, Aggregate>,
    pub config: ExperimentConfig,
}

/// Per-trial metric rows in trial order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<(u64, Vec<f64>)>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|(_, r)| r[i]).collect())
    }
}

/// Seed of trial `r`.
pub fn trial_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

/// Runs every trial, spreading them over `jobs` threads. Results come back
/// in trial order whatever the scheduling.
pub fn run_trials(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<Trial>> {
    let shared = Shared::load(cfg)?;
    let run_one = |r: usize| -> Result<Trial> {
        let seed = trial_seed(cfg.seed, r);
        let f = match cfg.experiment {
            Experiment::Train => experiments::train_trial,
            Experiment::FindOt => experiments::find_ot_trial,
            Experiment::Lmc => experiments::lmc_trial,
            Experiment::Continual => experiments::continual_trial,
        };
        f(cfg, &shared, r, seed).with_context(|| format!("trial {r} (seed {seed})"))
    };
    let jobs = jobs.clamp(1, cfg.runs);
    if jobs == 1 {
        return (0..cfg.runs).map(run_one).collect();
    }
    let mut slots: Vec<Option<Result<Trial>>> = (0..cfg.runs).map(|_| None).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let run_one = &run_one;
                scope.spawn(move || {
                    (j..cfg.runs).step_by(jobs).map(|r| (r, run_one(r))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (r, t) in h.join().expect("trial thread panicked") {
                slots[r] = Some(t);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every trial ran")).collect()
}

pub fn tabulate(cfg: &ExperimentConfig, trials: &[Trial]) -> Table {
    let columns = trials.first().map(|t| t.metrics.iter().map(|m| m.0).collect()).unwrap_or_default();
    let rows = trials
        .iter()
        .enumerate()
        .map(|(r, t)| (trial_seed(cfg.seed, r), t.metrics.iter().map(|m| m.1).collect()))
        .collect();
    Table { columns, rows }
}

pub fn summarize(cfg: &ExperimentConfig, table: &Table) -> Summary {
    let metrics = table
        .columns
        .iter()
        .map(|c| (c.to_string(), Aggregate::of(&table.column(c).expect("known column"))))
        .collect();
    Summary {
        experiment: cfg.experiment,
        method: cfg.method,
        runs: cfg.runs,
        base_seed: cfg.seed,
        metrics,
        config: cfg.clone(),
    }
}

pub fn trials_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["trial", "seed"].into_iter().chain(table.columns.iter().copied());
    w.write_record(header)?;
    for (r, (seed, row)) in table.rows.iter().enumerate() {
        let fields = [r.to_string(), seed.to_string()].into_iter().chain(row.iter().map(f64::to_string));
        w.write_record(fields)?;
    }
    Ok(w.into_inner()?)
}

/// Runs the experiment and writes `trials.csv`, `summary.json` and every
/// trial artifact into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<(Table, Summary)> {
    let trials = run_trials(cfg, jobs)?;
    let table = tabulate(cfg, &trials);
    let summary = summarize(cfg, &table);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("trials.csv"), trials_csv(&table)?)?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out.join("summary.json"), json)?;
    for t in &trials {
        for (name, bytes) in &t.files {
            fs::write(out.join(name), bytes)?;
        }
    }
    Ok((table, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_uses_sample_sd() {
        let a = Aggregate::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.mean, 2.5);
        assert!((a.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((a.min, a.max), (1.0, 4.0));
        assert_eq!(Aggregate::of(&[7.0]).sd, 0.0);
    }

    #[test]
    fn seeds_are_offsets() {
        assert_eq!(trial_seed(10, 3), 13);
        assert_eq!(trial_seed(u64::MAX, 1), 0);
    }
}
