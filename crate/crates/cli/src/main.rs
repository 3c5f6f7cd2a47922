//! Batch front end for the solver laboratory.
//!
//! Three subcommands, each driven by a key-value config file and writing
//! CSV data plus a JSON summary into an output directory:
//!
//! * `radial-expand` integrates a radial solution and compares it with its
//!   truncated expansion at infinity;
//! * `poisson` solves an exterior problem by harmonic decomposition and
//!   certifies growth and equation residuals;
//! * `extract` recovers the quadratic matrix and linear term of an oracle
//!   and checks the fitted residual law against the expected one.
//!
//! Exit status: 0 when every requested certificate passes, 1 when a
//! certificate fails, 2 on configuration or I/O problems. The environment
//! variable `MALAB_TOL_SCALE` multiplies the pass/fail tolerances.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "malab", version, about = "Reproducible experiments on solutions with quadratic growth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Radial solution vs truncated expansion, with residual-law fit
    RadialExpand {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exterior Poisson solve with growth and residual certificates
    Poisson {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quadratic/linear term extraction from a convex oracle
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config_path, out_dir, runner): (_, _, fn(&config::Config, &std::path::Path) -> _) =
        match &cli.command {
            Command::RadialExpand { config, out } => (config, out, commands::radial_expand),
            Command::Poisson { config, out } => (config, out, commands::poisson),
            Command::Extract { config, out } => (config, out, commands::extract),
        };
    let config = match config::Config::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match runner(&config, out_dir) {
        Ok(outcome) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.summary).expect("summary serializes")
            );
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("certificate failed; see summary above");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
