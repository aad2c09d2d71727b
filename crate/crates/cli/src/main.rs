//! `pqobst`: runs one obstacle-problem experiment per invocation.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 solver failure
//! (stagnation, iteration limit or excessive violation; partial artifacts
//! are still written), 1 anything else.

mod config;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, Loaded};
use sweep::{parse_values, Axis};

#[derive(Parser)]
#[command(
    name = "pqobst",
    version,
    about = "Obstacle problems with (p,q)-growth energies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the continuation ladder and write the solution, traces and summary.
    Solve { config: PathBuf },
    /// Repeat the solve over values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; `2k0` means twice the penalty threshold,
        /// `geom:1e-1:1e-5:5` a geometric range.
        #[arg(long)]
        values: Option<String>,
    },
    /// Compute diagnostics for a stored field.
    Diagnose { config: PathBuf, field: PathBuf },
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Solve { config } => run::run_solve(&Loaded::from_path(&config)?),
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let loaded = Loaded::from_path(&config)?;
            let spec = values.as_deref().or(axis.default_values()).ok_or_else(|| {
                config::config_error(format!("--values is required for --axis {}", axis.name()))
            })?;
            let values = parse_values(spec).map_err(config::config_error)?;
            run::run_sweep(&loaded, axis, &values)
        }
        Command::Diagnose { config, field } => {
            run::run_diagnose(&Loaded::from_path(&config)?, &field)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                run::EXIT_CONFIG
            } else {
                run::EXIT_OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(run::EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
