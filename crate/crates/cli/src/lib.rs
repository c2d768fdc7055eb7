//! Command-line front end for `pfmix`: simulate datasets, fit models, run
//! sweeps and evaluate on held-out data. Every command writes into a run
//! directory (`--out`) and finishes with a `manifest.json`.

pub mod config;
pub mod csv_io;
pub mod error;
pub mod evaluate;
pub mod fitting;
pub mod model_file;
pub mod run_dir;
pub mod simulate;
pub mod sweep;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use error::CliResult;
use run_dir::RunDir;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "PFMIX_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "pfmix", version, about = "Prediction-focused mixture models")]
pub struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and write train/test CSVs with a truth sidecar.
    Simulate(ExperimentConfig),
    /// Fit one model on a training CSV.
    Fit(ExperimentConfig),
    /// Fit and evaluate over kinds × K × p × seeds.
    Sweep(ExperimentConfig),
    /// Score a saved model on a test CSV.
    Eval(ExperimentConfig),
}

impl Command {
    fn parts(&self) -> (&'static str, &ExperimentConfig) {
        match self {
            Command::Simulate(c) => ("simulate", c),
            Command::Fit(c) => ("fit", c),
            Command::Sweep(c) => ("sweep", c),
            Command::Eval(c) => ("eval", c),
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let (name, flags) = cli.command.parts();
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?.merged(flags),
        None => ExperimentConfig::default().merged(flags),
    };
    let out = cli.out.as_ref().ok_or_else(|| error::usage("missing --out <dir>"))?;
    let mut run = RunDir::create(out)?;
    match cli.command {
        Command::Simulate(_) => simulate::cmd_simulate(&cfg, &mut run)?,
        Command::Fit(_) => fitting::cmd_fit(&cfg, &mut run)?,
        Command::Sweep(_) => sweep::cmd_sweep(&cfg, &mut run)?,
        Command::Eval(_) => evaluate::cmd_eval(&cfg, &mut run)?,
    }
    run.finish(name, &cfg)
}
