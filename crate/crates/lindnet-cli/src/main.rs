//! `lindnet` — seeded, reproducible experiment runs.
//!
//! Exit codes: 0 success; 1 command-line usage error; 2 configuration or
//! run-setup rejected (syntax, validation, unreadable file, existing
//! output directory without `--force`); 3 run finished without reaching
//! its goal (steady-state convergence or the full time grid).

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use lindnet_cli::config::{parse_config_with_overrides, ExperimentConfig, ModeCfg, Overrides};
use lindnet_cli::runner::{self, RunnerError};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_UNCONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lindnet",
    version = runner::VERSION,
    about = "Variational steady states and dynamics of dissipative spin systems",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network to the model's steady state.
    Steady(RunArgs),
    /// Track real-time dynamics on a fixed time grid.
    Dynamics(RunArgs),
    /// Write only the exact reference values (no training).
    Oracle(RunArgs),
    /// Run every point of the config's [sweep] section.
    Sweep(RunArgs),
    /// Check a config and exit without writing any files.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML experiment configuration.
    config: PathBuf,
    /// Override the [solver] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the [solver] backend.
    #[arg(long, value_parser = ["exact", "mcmc", "shots"])]
    backend: Option<String>,
    /// Override the output root directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
}

fn load(args: &RunArgs, forced_mode: Option<ModeCfg>) -> Result<ExperimentConfig, ExitCode> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        eprintln!("cannot read config {}: {e}", args.config.display());
        ExitCode::from(EXIT_INVALID)
    })?;
    let overrides = Overrides {
        seed: args.seed,
        backend: args.backend.clone(),
        out_dir: args.out.as_ref().map(|p| p.display().to_string()),
    };
    let mut cfg = parse_config_with_overrides(&text, &overrides).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(EXIT_INVALID)
    })?;
    if let Some(mode) = forced_mode {
        cfg.solver.mode = mode;
    }
    Ok(cfg)
}

fn report(err: RunnerError) -> ExitCode {
    eprintln!("{err}");
    ExitCode::from(EXIT_INVALID)
}

fn single(args: &RunArgs, mode: ModeCfg) -> ExitCode {
    let cfg = match load(args, Some(mode)) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    match runner::run_single(&cfg, args.force, args.quiet) {
        Ok(outcome) if outcome.status.is_success() => ExitCode::SUCCESS,
        Ok(outcome) => {
            if !args.quiet {
                eprintln!("run ended with status: {}", outcome.status.as_str());
            }
            ExitCode::from(EXIT_UNCONVERGED)
        }
        Err(e) => report(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };

    match &cli.command {
        Command::Steady(args) => single(args, ModeCfg::Steady),
        Command::Dynamics(args) => single(args, ModeCfg::Dynamics),
        Command::Oracle(args) => {
            let cfg = match load(args, None) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            match runner::run_oracle(&cfg, args.force, args.quiet) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => report(e),
            }
        }
        Command::Sweep(args) => {
            let cfg = match load(args, None) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            match runner::run_sweep(&cfg, args.force, args.quiet) {
                Ok(outcome) if outcome.all_succeeded() => ExitCode::SUCCESS,
                Ok(outcome) => {
                    if !args.quiet {
                        let failed: Vec<&str> = outcome
                            .statuses
                            .iter()
                            .filter(|s| !s.is_success())
                            .map(|s| s.as_str())
                            .collect();
                        eprintln!("sweep points ended with: {}", failed.join(", "));
                    }
                    ExitCode::from(EXIT_UNCONVERGED)
                }
                Err(e) => report(e),
            }
        }
        Command::Validate(args) => {
            let cfg = match load(args, None) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            if !args.quiet {
                println!(
                    "config ok: run id {}-s{}",
                    cfg.experiment_hash(),
                    cfg.solver.seed
                );
            }
            ExitCode::SUCCESS
        }
    }
}
