//! `qsdp` — train quantized two-layer networks by solving a semidefinite
//! relaxation and rounding it with sign-Gaussian sampling.
//!
//! Commands compose through files: `gen-data` writes dataset caches,
//! `train-sdp` a solution JSON, `shape` a covariance JSON, `sample` /
//! `quantize-baseline` / `convert` bit-packed network files, and
//! `experiment` orchestrates the full pipeline over an (m, seed) grid.
//!
//! Exit codes: 0 success, 2 config error, 3 solver non-convergence,
//! 4 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::VariantChoice;

#[derive(Debug)]
pub enum ErrorKind {
    Config,
    Solver,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { kind: ErrorKind::Config, message }
    }

    pub fn io(message: String) -> Self {
        Self { kind: ErrorKind::Io, message }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Solver => 3,
            ErrorKind::Io => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { kind: ErrorKind::Io, message: e.to_string() }
    }
}

impl From<qsdp::QsdpError> for CliError {
    fn from(e: qsdp::QsdpError) -> Self {
        use qsdp::QsdpError::*;
        let kind = match &e {
            SolverDidNotConverge { .. } | NotConverged => ErrorKind::Solver,
            Io(_) | Format(_) | Csv(_) | CsvCell { .. } => ErrorKind::Io,
            _ => ErrorKind::Config,
        };
        Self { kind, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "qsdp", version, about = "Quantized network training via SDP relaxation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest a dataset and write train/test caches.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for train.qdat / test.qdat.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the lower-bounding SDP and write the solution JSON.
    TrainSdp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's relaxation variant.
        #[arg(long, value_enum)]
        variant: Option<VariantChoice>,
    },
    /// Build the unit-diagonal sampling covariance from a solution.
    Shape {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw quantized first-layer weights and write the network file.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Gradient-train a real-valued bilinear network (the comparison method).
    TrainBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Round trained weights to signs with one least-squares scalar.
    QuantizeBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a network file against a dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Optional metrics JSON output path (metrics always print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert between network representations (poly -> bilinear -> quadratic).
    Convert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline over an (m, seed) grid and emit result tables.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for the grid (defaults to the rayon default).
        #[arg(long)]
        threads: Option<usize>,
        /// Run a single seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => commands::gen_data(&config, &out),
        Command::TrainSdp { config, out, variant } => commands::train_sdp(&config, &out, variant),
        Command::Shape { config, out } => commands::shape(&config, &out),
        Command::Sample { config, out, seed } => commands::sample(&config, &out, seed),
        Command::TrainBaseline { config, out, seed } => {
            commands::train_baseline(&config, &out, seed)
        }
        Command::QuantizeBaseline { config, out } => commands::quantize_baseline(&config, &out),
        Command::Eval { config, out } => commands::eval(&config, out.as_deref()),
        Command::Convert { config, out } => commands::convert(&config, &out),
        Command::Experiment { config, out, threads, seed } => {
            commands::experiment(&config, &out, threads, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}
