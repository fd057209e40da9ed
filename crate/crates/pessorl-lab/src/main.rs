//! Command-line driver for the offline RL laboratory.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! failures (including value-iteration divergence).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pessorl_lab::config::ExperimentConfig;
use pessorl_lab::{experiment, LabError};

/// Environment variable that overrides the config's output directory
/// (itself overridden by `--output-dir`).
const OUTPUT_DIR_ENV: &str = "PESSORL_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "pessorl", about = "Tabular offline RL with pessimistic value shaping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment config (.json or .toml)
    #[arg(long)]
    config: PathBuf,
    /// Where to write artifacts (overrides the config and the
    /// PESSORL_OUTPUT_DIR environment variable)
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the offline dataset and write dataset.jsonl
    GenData(CommonArgs),
    /// Fit the bootstrapped dynamics ensemble and write ensemble.json
    FitEnsemble(CommonArgs),
    /// Train the configured variant and write trace.csv
    Train(CommonArgs),
    /// Evaluate the theoretical bounds at convergence and write bounds.json
    Bounds(CommonArgs),
    /// Roll out the trained policy and write summary.json
    Eval(CommonArgs),
    /// Full pipeline: every artifact
    Run(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::GenData(a)
            | Command::FitEnsemble(a)
            | Command::Train(a)
            | Command::Bounds(a)
            | Command::Eval(a)
            | Command::Run(a) => a,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, LabError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        config.output_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if config.output_dir.as_os_str().is_empty() {
        return Err(LabError::Config("output_dir: must not be empty".into()));
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(cli.command.common()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::GenData(_) => experiment::cmd_gen_data(&config),
        Command::FitEnsemble(_) => experiment::cmd_fit_ensemble(&config),
        Command::Train(_) => experiment::cmd_train(&config),
        Command::Bounds(_) => experiment::cmd_bounds(&config),
        Command::Eval(_) => experiment::cmd_eval(&config),
        Command::Run(_) => experiment::run_experiment(&config).map(|summary| {
            println!(
                "{} mean_return {:.4} success_rate {:.4} delta_k {:.4}",
                summary.variant, summary.mean_return, summary.success_rate, summary.delta_k
            );
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_config() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
