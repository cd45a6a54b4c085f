//! The `hydrodeep` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, 3 failed
//! numeric verification. Every command that writes an output directory puts
//! `effective_config.toml` and `VERSION` in it first; if the command then
//! fails, a `FAILED` file holding the diagnostic is left beside whatever was
//! written.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{parse_lags, FAILED_FILE, PREDICTIONS_HEADER, VERSION_FILE};
pub use config::{GenerateConfig, RunConfig};

use crate::error::Error;
use crate::models::Arch;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 3,
            CliError::Run(e) if e.is_data_error() => 2,
            CliError::Run(Error::Dimension(_) | Error::Window { .. } | Error::EmptySequence) => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hydrodeep", version, about = "River discharge prediction from gridded precipitation and runoff")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the seeds in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source watershed and optional shifted targets.
    Generate {
        /// Run configuration whose [synth] and [generate] sections are used.
        #[arg(long, alias = "config")]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated shift modes: spatial_shift, temporal_shift, both.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prepare, train and evaluate one model; writes a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lag: Option<usize>,
        /// Output directory; the checkpoint is `model.ckpt` inside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset's test block.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score every window instead of the test block only.
        #[arg(long)]
        all: bool,
        /// Report PBIAS with a squared numerator, for auditing published tables.
        #[arg(long)]
        as_printed: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-block metrics for each lag in a range such as `3..11` or `5,7,9`.
    SweepLag {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "3..11")]
        lags: String,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare freeze policies against training from scratch on new watersheds.
    Transfer {
        #[arg(long)]
        source_ckpt: PathBuf,
        /// Comma-separated dataset directories.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// T1, T2, T3, T4 or all.
        #[arg(long, default_value = "all")]
        policy: String,
        /// Finetuning epochs.
        #[arg(long)]
        budget: Option<usize>,
        /// Also train a fresh model for this many epochs.
        #[arg(long)]
        full_epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full network's gradients.
    Gradcheck {
        #[arg(long, default_value = "hydrodeep")]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        grids: usize,
        #[arg(long, default_value_t = 7)]
        lag: usize,
        /// Optional directory for the per-tensor table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several architectures under one protocol.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        archs: Option<Vec<Arch>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hydrodeep: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

pub(crate) fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
