//! Batch runner for private GP experiments.
//!
//! Each subcommand resolves a [`RunConfig`] (defaults, then an optional JSON
//! file, then flags), runs one pipeline with RNG streams derived from the
//! seed and writes `results.json` plus CSV tables into the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{Command, Overrides, RunConfig};

/// Exit status for invalid configuration or input.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for numerical failure inside a pipeline.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit status for failures writing artifacts.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Numerical(_) => "numerical",
            Self::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Numerical(_) => EXIT_NUMERICAL,
            Self::Io(_) => EXIT_IO,
        }
    }
}

impl From<dpgp_core::Error> for CliError {
    fn from(e: dpgp_core::Error) -> Self {
        use dpgp_core::Error as E;
        let message = e.to_string();
        match e {
            E::Factorization { .. }
            | E::ZeroCloakingMatrix
            | E::NotConverged { .. }
            | E::NonFinite(_)
            | E::NegativeVariance { .. } => Self::Numerical(message),
            _ => Self::Validation(message),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dpgp",
    version,
    about = "Differentially private Gaussian-process experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Private regression at a set of test inputs.
    Regress,
    /// Private Laplace classification.
    Classify,
    /// Exponential-mechanism selection over a hyperparameter grid.
    SelectHypers,
    /// RMSE table or inducing-count × lengthscale accuracy sweep.
    Bench,
}

#[derive(Debug, clap::Args)]
struct GlobalArgs {
    /// JSON file overlaid on the subcommand's defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Privacy budget; `inf` disables the noise.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Bound on how far a single output may change.
    #[arg(long, global = true)]
    sensitivity: Option<f64>,
    /// Number of inducing inputs.
    #[arg(long, global = true, value_name = "M")]
    sparse: Option<usize>,
    /// Privatised Newton updates (classification).
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Require a seed and withhold the clean mean from every artifact.
    #[arg(long, global = true)]
    privacy_mode: bool,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Regress => Command::Regress,
            Sub::Classify => Command::Classify,
            Sub::SelectHypers => Command::SelectHypers,
            Sub::Bench => Command::Bench,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status. Errors go to stderr as one JSON object.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let g = cli.global;
    let overrides = Overrides {
        out: g.out,
        seed: g.seed,
        epsilon: g.epsilon,
        delta: g.delta,
        sensitivity: g.sensitivity,
        sparse: g.sparse,
        iterations: g.iterations,
        privacy_mode: g.privacy_mode,
    };
    let result =
        RunConfig::resolve(cli.command.into(), g.config.as_deref(), &overrides).and_then(|cfg| commands::execute(&cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{report}");
            e.exit_code()
        }
    }
}
