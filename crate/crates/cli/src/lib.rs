//! `mtclf`: analysis, simulation, grid value iteration and verification over a scenario file.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | a `verify` check failed |
//! | 2 | the config could not be parsed or is inconsistent |
//! | 3 | an output or input file could not be read or written |
//! | 4 | the controller QP failed during a run |
//! | 5 | value iteration did not converge |

// `!(x > 0.0)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod scenario;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use mtclf_core::controller::SigmaMode;
use thiserror::Error;

pub use scenario::{Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_QP: i32 = 4;
pub const EXIT_NOT_CONVERGED: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("QP failure at step {step}: {reason}")]
    Qp { step: usize, reason: String },
    #[error("{0}")]
    NotConverged(String),
    #[error("failing checks: {}", .0.join(", "))]
    VerifyFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) | CliError::Io { .. } => EXIT_IO,
            CliError::Scenario(_) | CliError::Config(_) => EXIT_CONFIG,
            CliError::Qp { .. } => EXIT_QP,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::VerifyFailed(_) => EXIT_VERIFY_FAILED,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    Undiscounted,
    Discounted,
}

impl From<SigmaArg> for SigmaMode {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::Undiscounted => SigmaMode::Undiscounted,
            SigmaArg::Discounted => SigmaMode::Discounted,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mtclf", version, about = "Multi-task value-function controller toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid analysis of the task set: executability CSV, angle heatmaps, common goals.
    Analyze { config: PathBuf },
    /// Closed-loop run of the min-norm controller.
    Simulate {
        config: PathBuf,
        #[arg(long, num_args = 1.., allow_negative_numbers = true, required = true)]
        x0: Vec<f64>,
        /// Overrides the controller's offset mode.
        #[arg(long, value_enum)]
        sigma: Option<SigmaArg>,
    },
    /// Grid value iteration for one task's state cost.
    SolveHjb {
        config: PathBuf,
        #[arg(long)]
        task: usize,
        /// Overrides the task's discount rate.
        #[arg(long)]
        discount: Option<f64>,
        /// Output file; defaults to `<output_dir>/task<i>.vfgrid`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal-input recovery, HJB residual and finite-difference gradient checks.
    Verify { config: PathBuf },
}

/// Runs one subcommand, printing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Analyze { config } => commands::analyze(&Scenario::load(config)?, out),
        Command::Simulate { config, x0, sigma } => {
            commands::simulate(&Scenario::load(config)?, x0, sigma.map(SigmaMode::from), out)
        }
        Command::SolveHjb {
            config,
            task,
            discount,
            out: path,
        } => commands::solve_hjb(&Scenario::load(config)?, *task, *discount, path.as_deref(), out),
        Command::Verify { config } => verify::verify(&Scenario::load(config)?, out),
    }
}
