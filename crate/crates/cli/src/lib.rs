//! Configuration-driven experiment runner.
//!
//! `qnnlv <command> --config FILE [--set key=value]... [--jobs N]` merges the
//! file, the `QNNLV_SEED` variable and the overrides, persists the result as
//! `<out_dir>/config.resolved` and runs the command. Rerunning from that file
//! reproduces every CSV bit for bit.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use config::{ConfigError, RunConfig};
use error::CliResult;
use output::RunDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// One training run.
    Train,
    /// Independent runs with seeds `master_seed ^ i`.
    Ensemble,
    /// Closed-form predictions only.
    Theory,
    /// Late-time Hessian gap across targets.
    HessianSweep,
    /// Frame potential of a unitary ensemble.
    Framepot,
    /// Autocorrelators of saved trajectories.
    Autocorr,
    /// Depolarizing strength from ideal and noisy error series.
    FitNoise,
    /// Saved trajectories against their regime predictions and a theory file.
    Compare,
}

impl Command {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "qnnlv", version, about = "Training-dynamics experiments for parameterized quantum circuits")]
pub struct Cli {
    pub command: Command,
    /// TOML config; keys under [run] or outside any section are top-level.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. `--set eta=0.01` or `--set theory.L=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads; defaults to all cores.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

/// Runs a parsed command line; `env_seed` is the value of `QNNLV_SEED`.
pub fn run(cli: &Cli, env_seed: Option<&str>) -> CliResult<String> {
    let text = match &cli.config {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut cfg = RunConfig::load(text.as_deref(), &cli.set, env_seed)?;
    cfg.command = Some(cli.command.name());
    let out = RunDir::create(&cfg.out_dir)?;
    out.text("config.resolved", &cfg.resolved_text())?;
    let jobs = cli.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("--jobs {jobs}: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, &cfg, &out, jobs))
}
