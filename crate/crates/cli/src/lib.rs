//! Command-line front end: ingest long-format curve data, run smoothing,
//! fitting, model selection, sparse basis selection and simulation
//! experiments, and export machine-readable results.

pub mod args;
pub mod commands;
pub mod fmt;
pub mod ingest;
pub mod outputs;
pub mod schema;

use funfem_core::Error as CoreError;

/// Top-level failure classes, mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input data; exit code 2.
    Config(String),
    /// A fit or downstream computation failed; exit code 3.
    Fit(String),
    /// Filesystem trouble; exit code 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Classifies a core error raised while computing (as opposed to while
    /// validating configuration).
    pub fn from_compute(e: CoreError) -> Self {
        match e {
            CoreError::InvalidBasis(_)
            | CoreError::InvalidModel(_)
            | CoreError::InvalidArgument(_)
            | CoreError::InvalidCurves(_)
            | CoreError::InvalidGrid(_)
            | CoreError::TimeOutsideDomain { .. }
            | CoreError::CurveTooShort { .. }
            | CoreError::LabelLengthMismatch { .. } => CliError::Config(e.to_string()),
            CoreError::RankDeficientCurve { .. }
            | CoreError::NonPositiveDefinite { .. }
            | CoreError::InvalidPosteriors(_)
            | CoreError::EmptyCluster { .. }
            | CoreError::SingularPencil
            | CoreError::EigenFailure
            | CoreError::AllRestartsFailed { .. }
            | CoreError::SparseDirectionZero { .. } => CliError::Fit(e.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Fit(msg) => write!(f, "fit failure: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Dispatches a parsed command line; returns the exit code.
pub fn run(cli: args::Cli) -> i32 {
    let result = match &cli.command {
        args::Command::Fit(a) => commands::cmd_fit(a),
        args::Command::Select(a) => commands::cmd_select(a),
        args::Command::Sparse(a) => commands::cmd_sparse(a),
        args::Command::Simulate(a) => commands::cmd_simulate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
