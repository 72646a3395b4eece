//! `purcell`: simulations, sweeps, fits and the exact oracle from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "purcell", version, about = "Driven emitter ensembles in a lossy cavity: simulate, sweep, fit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "purcell-out")]
    pub out: PathBuf,
    /// Configuration override, e.g. `--set model.n_traj=40`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true, env = "PURCELL_THREADS")]
    pub threads: Option<usize>,
    /// Print what would be done and write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Master seed of the disorder sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase output detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the disorder realizations and write them as CSV.
    Sample,
    /// Disorder-averaged fluorescence decay and exponential fit at one point.
    Simulate {
        #[arg(long)]
        flux: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        detuning: Option<f64>,
        /// `full` or `local`.
        #[arg(long)]
        model: Option<String>,
    },
    /// Flux x detuning sweep into a run directory.
    Sweep,
    /// Integrated fluorescence versus flux with the saturation fit.
    Saturation,
    /// Full versus local model comparison table.
    Compare {
        /// Completed run directory to read instead of running a new sweep.
        #[arg(long, value_name = "DIR")]
        from: Option<PathBuf>,
    },
    /// Fit a model to a two-column CSV.
    Fit {
        input: PathBuf,
        /// One of exponential, stretched_composite, lorentzian, double_lorentzian, ple_saturation.
        #[arg(long)]
        model: String,
        /// Reference decay rate, in inverse abscissa units, for the Purcell ratio.
        #[arg(long)]
        gamma0: Option<f64>,
        /// Residual weighting for stretched fits: uniform, poisson or relative.
        #[arg(long, default_value = "uniform")]
        weighting: String,
    },
    /// Exact master equation versus mean field for one or two ions.
    Oracle,
}

/// How a successful invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Completed, but some fit or check was flagged.
    Flagged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let display_only =
                matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            let _ = e.print();
            return if display_only { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match commands::run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Flagged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(1)
        }
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.last().is_some_and(|prev| prev.contains(&msg)) {
            out.push(msg);
        }
    }
    out.join(": ")
}
