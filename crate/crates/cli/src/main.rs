//! `glycontrol`: synthesize, simulate, verify and sweep fuzzy glucose controllers.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration
//! error, 4 infeasible synthesis, 5 failed verification.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glycontrol::sim::PumpMap;

use crate::config::{DesignFlags, RunConfig, SimFlags};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "glycontrol", version, about = "Fuzzy H-infinity insulin controller design and simulation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "GLYCONTROL_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum PumpMapArg {
    Absolute,
    Deviation,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the per-rule LMI programs and write a gains file.
    Synthesize {
        #[command(flatten)]
        design: DesignFlags,
    },
    /// Run the nonlinear closed loop and write a CSV trace.
    Simulate {
        #[command(flatten)]
        design: DesignFlags,
        #[command(flatten)]
        sim: SimFlags,
        /// Gains file from `synthesize`; without it the controller is synthesized first.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// How controller inputs map to pump rates.
        #[arg(long, value_enum)]
        pump_map: Option<PumpMapArg>,
    },
    /// Re-check a gains file against its model.
    Verify {
        /// Gains file from `synthesize`.
        #[arg(long)]
        gains: PathBuf,
    },
    /// Run every preset at alpha = 1, 2, 3 and write a summary table.
    Sweep {
        #[command(flatten)]
        design: DesignFlags,
        #[command(flatten)]
        sim: SimFlags,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = config::out_dir(cli.out, &cfg);
    match cli.command {
        Command::Synthesize { design } => commands::synthesize(&design, &cfg, &out).map(drop),
        Command::Simulate { design, sim, gains, pump_map } => {
            let args = commands::SimArgs {
                design: &design,
                sim: &sim,
                gains: gains.as_deref(),
                pump_map: pump_map.map(|p| match p {
                    PumpMapArg::Absolute => PumpMap::Absolute,
                    PumpMapArg::Deviation => PumpMap::Deviation,
                }),
            };
            commands::simulate(&args, &cfg, &out).map(drop)
        }
        Command::Verify { gains } => commands::verify(&gains, &out),
        Command::Sweep { design, sim } => commands::sweep(&design, &sim, &cfg, &out).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("glycontrol: {e}");
            e.exit_code()
        }
    }
}
