//! `dualhom` command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dualhom::Error;

#[derive(Parser, Debug)]
#[command(name = "dualhom", version, about = "Homogenization of two-scale dual-continuum diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a problem file: coercivity, zero-mean exchange, structure.
    Validate(CommonArgs),
    /// Solve the cell problems at one macro point and export the correctors.
    Cell(CellArgs),
    /// Effective coefficients over the macro domain.
    Effective(CommonArgs),
    /// Solve the homogenized system.
    Homogenize(HomogenizeArgs),
    /// Solve the resolved two-scale system for each eps.
    Fine(CommonArgs),
    /// eps sweep: fine solves, corrector, error norms and rate fits.
    Study(StudyArgs),
    /// Summarize a finished study.
    Report(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Problem file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated eps values, strictly decreasing.
    #[arg(long, value_delimiter = ',', default_values_t = [0.125, 0.0625, 0.03125, 0.015625])]
    pub eps: Vec<f64>,
    /// Cell-grid nodes per axis.
    #[arg(long, default_value_t = 64)]
    pub cell_n: usize,
    /// Macro-mesh cells per axis.
    #[arg(long, default_value_t = 32)]
    pub macro_n: usize,
    /// Time step; defaults to T/100.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value = "ie", value_parser = ["ie", "cn"])]
    pub scheme: String,
    /// Resolution factor of resolved runs, h <= eps/rho.
    #[arg(long, default_value_t = 16)]
    pub rho: usize,
    /// Apply the boundary cutoff to the corrector.
    #[arg(long)]
    pub cutoff: bool,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Linear-solver tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol_lin: f64,
}

#[derive(Args, Debug, Clone)]
pub struct CellArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Macro point, comma separated; defaults to the domain center.
    #[arg(long, value_delimiter = ',')]
    pub at: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone)]
pub struct HomogenizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run the built-in manufactured solution and record convergence orders.
    #[arg(long)]
    pub manufactured: bool,
    /// Dimension of the manufactured problem.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
}

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Cell-problem samples per axis for x-dependent coefficients.
    #[arg(long, default_value_t = 8)]
    pub macro_samples: usize,
    /// Minimum accepted corrector-gradient slope.
    #[arg(long, default_value_t = 0.4)]
    pub slope_threshold: f64,
    /// Test hook: skip all solves and inject errors scale * eps^rate.
    #[arg(long, hide = true)]
    pub synthetic_rate: Option<f64>,
    #[arg(long, hide = true, default_value_t = 1.0)]
    pub synthetic_scale: f64,
}

/// Failure with a process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn threshold(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NoConvergence { .. } | Error::Singular(_) | Error::NotSpd(_) => 3,
        Error::AtMacroPoint { source, .. } => exit_code(source),
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Cell(a) => commands::cell(a),
        Command::Effective(a) => commands::effective(a),
        Command::Homogenize(a) => commands::homogenize(a),
        Command::Fine(a) => commands::fine(a),
        Command::Study(a) => commands::study(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dualhom: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
