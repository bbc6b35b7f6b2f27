use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod selftest;

/// Simulate 5G NR downlink positioning: direct position estimation and an OTDoA baseline.
#[derive(Debug, Parser)]
#[command(name = "nrpos", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalOpts {
    /// Scenario document (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; replaces `experiment.base_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Trial worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Override a configuration field, e.g. `--set experiment.snr_db=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the impulse response and power delay profile of a TDL profile.
    ChannelDump {
        /// Profile name: A, B, C, D or E.
        #[arg(long)]
        profile: String,
        /// Desired RMS delay spread.
        #[arg(long, default_value_t = 65.0)]
        ds_ns: f64,
    },
    /// Evaluate the DPE objective on one search stage of one trial.
    Correlogram {
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Search stage whose grid is written (0 = first).
        #[arg(long, default_value_t = 0)]
        stage: usize,
        /// Fixed UE position `X,Y` instead of a random drop.
        #[arg(long, value_name = "X,Y")]
        truth: Option<String>,
    },
    /// Run the Monte Carlo experiment; writes trials.csv and summary.toml.
    Run,
    /// Run the experiment at every value of the `[sweep]` block; writes curve.csv.
    Sweep,
    /// DPE against OTDoA on the same trials; writes both error CDFs.
    Compare,
    /// Quick end-to-end invariant checks.
    Selftest,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Selftest(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Selftest(_) => 4,
        }
    }
}

impl From<nrpos_core::Error> for CliError {
    fn from(e: nrpos_core::Error) -> Self {
        match e {
            nrpos_core::Error::Config { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::ChannelDump { profile, ds_ns } => commands::channel_dump(g, profile, *ds_ns),
        Command::Correlogram { trial, stage, truth } => commands::correlogram(g, *trial, *stage, truth.as_deref()),
        Command::Run => commands::run(g),
        Command::Sweep => commands::sweep(g),
        Command::Compare => commands::compare(g),
        Command::Selftest => selftest::run(g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("error: {m}"),
                CliError::Selftest(n) => eprintln!("selftest: {n} check(s) failed"),
            }
            ExitCode::from(e.code())
        }
    }
}
