//! Command-line runner for the `hjlab` solvers and diagnostics.
//!
//! - [`config`]: strict `section.key = value` files with line-numbered errors
//! - [`problem`]: grids, Hamiltonians and problems built from config keys
//! - [`commands`]: one function per subcommand, each writing under `out_dir`
//!
//! Exit status is 0 when every check passes, 1 when a check fails and 2 on
//! usage or configuration errors.

pub mod commands;
pub mod config;
pub mod problem;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ConfigError;

/// Parsed command line.
#[derive(Debug, Parser)]
#[command(name = "hjlab", version, about = "Hamilton-Jacobi and mean-field-game numerical laboratory")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Directory receiving every output; relative `--out` paths resolve inside it.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Config override `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for randomized optimizer starts.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backward dynamic-programming solve.
    Solve(SolveArgs),
    /// Optimal path from a start point.
    Char(CharArgs),
    /// Regularity inequality checks on a solved or loaded field.
    Diagnose(DiagnoseArgs),
    /// Thresholds and divergence scan of the explicit counterexample family.
    Sharpness(SharpnessArgs),
    /// Variational mean-field-game solve with certification.
    Mfg(MfgArgs),
    /// Sobolev exponent scan over a resolution sequence.
    Scan(ScanArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "u.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CharArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Start point `t,x1[,x2]`.
    #[arg(long)]
    pub start: String,
    #[arg(long, default_value = "path.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Maximal,
    Goodtime,
    Stopradius,
    Revholder,
    Goodlambda,
    Sobolev,
    Dtcube,
    Blowup,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub check: Check,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SharpnessArgs {
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub q: f64,
    /// Slope scale; defaults to `max(2, 1.5 M_min)`.
    #[arg(long)]
    pub m: Option<f64>,
    /// Terminal scale; defaults to `max(1, 1.5 G_min)`.
    #[arg(long)]
    pub g_scale: Option<f64>,
    #[arg(long, value_parser = parse_f64_list)]
    pub epsilons: Option<FloatList>,
    #[arg(long, value_parser = parse_usize_list)]
    pub resolutions: Option<IndexList>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MfgArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_f64_list)]
    pub epsilons: FloatList,
    #[arg(long, value_parser = parse_usize_list)]
    pub resolutions: IndexList,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

/// Comma-separated numbers on the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatList(pub Vec<f64>);

/// Comma-separated integers on the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexList(pub Vec<usize>);

fn parse_f64_list(s: &str) -> Result<FloatList, String> {
    config::parse_f64_list(s).map(FloatList)
}

fn parse_usize_list(s: &str) -> Result<IndexList, String> {
    config::parse_usize_list(s).map(IndexList)
}

/// Failure of a run, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] hjlab::Error),
    #[error("{0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Solver(
                hjlab::Error::NonConvergence { .. } | hjlab::Error::Inconsistency(_) | hjlab::Error::GrowthViolation(_),
            ) => 1,
            _ => 2,
        }
    }
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
    pub report_path: PathBuf,
    /// Lines printed before the summary.
    pub stdout: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

impl RunConfig {
    /// Resolves an output path under `out_dir`.
    pub fn output(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        }
    }
}

/// Dispatches to the subcommand and writes its artifacts.
pub fn run(rc: &RunConfig) -> Result<Outcome, RunError> {
    std::fs::create_dir_all(&rc.out_dir)
        .map_err(|e| RunError::Output(format!("cannot create {}: {e}", rc.out_dir.display())))?;
    match &rc.command {
        Command::Solve(a) => commands::solve(rc, a),
        Command::Char(a) => commands::characteristic(rc, a),
        Command::Diagnose(a) => commands::diagnose(rc, a),
        Command::Sharpness(a) => commands::sharpness(rc, a),
        Command::Mfg(a) => commands::mfg(rc, a),
        Command::Scan(a) => commands::scan(rc, a),
    }
}
