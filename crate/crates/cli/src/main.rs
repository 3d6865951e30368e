//! `felodm`: runs the multiscale experiments from flat config files.

mod config;
mod output;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{ExperimentId, RunConfig};

#[derive(Parser)]
#[command(name = "felodm", version, about = "Combined fine/multiscale elliptic solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config's `outdir`.
        #[arg(long)]
        outdir: Option<PathBuf>,
        /// Allow fine sizes below the desk limit.
        #[arg(long)]
        full_scale: bool,
    },
    /// List the experiment ids a config can name.
    ListExperiments,
    /// Fit log-log slopes to every error column of a convergence CSV.
    Fit {
        #[arg(long)]
        csv: PathBuf,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            outdir,
            full_scale,
        } => {
            let cfg = RunConfig::from_file(&config)?;
            let outdir = outdir.unwrap_or_else(|| cfg.outdir.clone());
            let report = runner::run(&cfg, &outdir, full_scale)?;
            print!("{report}");
            println!("outputs in {}", outdir.display());
        }
        Command::ListExperiments => {
            for e in ExperimentId::ALL {
                println!("{:<18} {}", e.name(), e.description());
            }
        }
        Command::Fit { csv } => print!("{}", runner::fit_csv(&csv)?),
    }
    Ok(())
}
