//! `see`: data generation, training, entropy-gated evaluation, design
//! space sweeps, and report rendering for sensor-aware early-exit
//! classifiers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(name = "see", version, about = "Sensor-aware early-exit classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV.
    GenData(CommonArgs),
    /// Train a SEE CNN or forest cascade.
    Train(CommonArgs),
    /// Run entropy-gated inference and emit traces plus an energy report.
    Eval(CommonArgs),
    /// Explore the hyperparameter grid and select a deployment.
    Sweep(CommonArgs),
    /// Render tables from saved sweep records or trace logs.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Key-value configuration file (a run-manifest works here).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives artifacts and the run-manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset CSV path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model or cascade file path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Per-key overrides, repeatable: --set epochs=20
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep records file (sweep-records.jsonl).
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Trace log file (traces.jsonl).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Optional directory for the rendered report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(defaults: Vec<(&str, &str)>, args: &CommonArgs, command: &str) -> Result<Config> {
    let mut cfg = Config::from_defaults(&defaults);
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(out) = &args.out {
        cfg.set("out", out.display().to_string());
    }
    if let Some(dataset) = &args.dataset {
        cfg.set("dataset", dataset.display().to_string());
    }
    if let Some(model) = &args.model {
        cfg.set("model", model.display().to_string());
    }
    cfg.apply_overrides(&args.overrides)?;
    let recorded = cfg.require("command")?;
    if recorded != command {
        bail!("config was written for `{recorded}`, not `{command}`");
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => {
            let cfg = resolve(commands::gen_data_defaults(), &args, "gen-data")?;
            commands::cmd_gen_data(&cfg)
        }
        Command::Train(args) => {
            let cfg = resolve(commands::train_defaults(), &args, "train")?;
            commands::cmd_train(&cfg)
        }
        Command::Eval(args) => {
            let cfg = resolve(commands::eval_defaults(), &args, "eval")?;
            commands::cmd_eval(&cfg)
        }
        Command::Sweep(args) => {
            let cfg = resolve(commands::sweep_defaults(), &args, "sweep")?;
            commands::cmd_sweep(&cfg)
        }
        Command::Report(args) => commands::cmd_report(
            args.sweep.as_deref(),
            args.traces.as_deref(),
            args.out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
