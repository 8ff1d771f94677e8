use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pathdual_cli::{cmd_dp, cmd_duality, cmd_metrics, cmd_sample, cmd_strategy, RunConfig};

/// Superhedging and martingale-measure experiments on continuous price paths.
#[derive(Debug, Parser)]
#[command(name = "pathdual", version)]
struct Cli {
    /// key=value configuration file; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra key=value settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value recursion: U^e_0, tolerance, walk table and gap report.
    Dp,
    /// Value, measure estimate and superhedge side by side.
    Duality,
    /// Dump paths sampled from the constructed measure.
    Sample,
    /// Run the superhedge on path files or measure samples.
    Strategy,
    /// Metric properties of the uniform and Hausdorff distances.
    Metrics,
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("starting worker pool")?;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    let (summary, passed) = match cli.command {
        Command::Dp => cmd_dp(&cfg, out).map(|r| (r.summary, r.passed))?,
        Command::Duality => cmd_duality(&cfg, out).map(|r| (r.summary, r.passed))?,
        Command::Sample => cmd_sample(&cfg, out).map(|r| (r.summary, true))?,
        Command::Strategy => cmd_strategy(&cfg, out).map(|r| (r.summary, r.hedge.passed))?,
        Command::Metrics => cmd_metrics(&cfg, out).map(|r| (r.summary, r.passed))?,
    };
    print!("{summary}");
    Ok(passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
