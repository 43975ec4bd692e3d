use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;

use rebasin_kit::{run_experiment, Experiment, ExperimentConfig};

/// Sinkhorn re-basin experiments.
#[derive(Parser, Debug)]
#[command(name = "rebasin-kit", version)]
struct Args {
    /// train, find_ot, lmc or continual
    experiment: String,
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Base seed; trial r uses seed + r
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory (defaults to the config's `out`, then `out/<experiment>`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set rebasin.sinkhorn.tau=0.5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for independent trials
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn run(args: Args) -> Result<()> {
    let mut sets = vec![format!("experiment={}", args.experiment)];
    sets.extend(args.seed.map(|s| format!("seed={s}")));
    sets.extend(args.runs.map(|r| format!("runs={r}")));
    sets.extend(args.sets);
    let cfg = ExperimentConfig::from_file(&args.config, &sets)?;
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(experiment_name(cfg.experiment)));
    if args.jobs == 0 {
        bail!("--jobs must be ≥ 1");
    }
    let (_, summary) = run_experiment(&cfg, &out, args.jobs)?;
    println!(
        "{} {} runs={} → {}",
        experiment_name(cfg.experiment),
        cfg.method.map_or("", |m| m.name()),
        cfg.runs,
        out.display()
    );
    for (name, a) in &summary.metrics {
        println!("  {name:<24} {:>14.6} ± {:<12.6} [{:.6}, {:.6}]", a.mean, a.sd, a.min, a.max);
    }
    Ok(())
}

fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Train => "train",
        Experiment::FindOt => "find_ot",
        Experiment::Lmc => "lmc",
        Experiment::Continual => "continual",
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
