//! `comicl` command-line driver. Every subcommand reads one TOML run
//! configuration and reads or writes artifacts under its `output.dir`.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "comicl", version, about = "Conformal mixed-integer constraint learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Run configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the root seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its oracle descriptor.
    GenData(Common),
    /// Train the models the configured methods need.
    Train(Common),
    /// Compute the conformal calibration record.
    Calibrate(Common),
    /// Build and solve one instance for each configured method.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write the model in LP format.
        #[arg(long, value_name = "PATH")]
        emit_lp: Option<PathBuf>,
        /// Instance index (selects the cost vector).
        #[arg(long, default_value_t = 0)]
        instance: usize,
    },
    /// Run the full instance protocol and write the report.
    Experiment(Common),
    /// Recompute the summary table from a report CSV.
    Report(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COMICL_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(c) => config::load(&c).and_then(|r| stages::gen_data(&r)),
        Command::Train(c) => config::load(&c).and_then(|r| stages::train(&r)),
        Command::Calibrate(c) => config::load(&c).and_then(|r| stages::calibrate(&r)),
        Command::Solve { common, emit_lp, instance } => {
            config::load(&common).and_then(|r| stages::solve(&r, emit_lp.as_deref(), instance))
        }
        Command::Experiment(c) => config::load(&c).and_then(|r| stages::experiment(&r)),
        Command::Report(c) => config::load(&c).and_then(|r| stages::report(&r)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
