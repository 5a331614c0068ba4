//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by basis construction, smoothing, model fitting and
/// selection routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),

    #[error("time {time} outside basis domain [{t_min}, {t_max}]")]
    TimeOutsideDomain {
        time: f64,
        t_min: f64,
        t_max: f64,
    },

    #[error("invalid curve set: {0}")]
    InvalidCurves(String),

    #[error("curve {index} has {m} samples but the basis needs at least {p}")]
    CurveTooShort { index: usize, m: usize, p: usize },

    #[error("rank-deficient design matrix while smoothing curve {index}")]
    RankDeficientCurve { index: usize },

    #[error("invalid model configuration: {0}")]
    InvalidModel(String),

    #[error("covariance matrix of cluster {k} is not positive definite")]
    NonPositiveDefinite { k: usize },

    #[error("invalid posterior matrix: {0}")]
    InvalidPosteriors(String),

    #[error("cluster {k} emptied out (soft count {n_k:.3e})")]
    EmptyCluster { k: usize, n_k: f64 },

    #[error("generalized eigenproblem is singular beyond ridge repair")]
    SingularPencil,

    #[error("symmetric eigensolver failed to converge")]
    EigenFailure,

    #[error(
        "all {attempts} restarts failed: {last_failure} (K={k}, try more restarts or a smaller K)"
    )]
    AllRestartsFailed {
        attempts: usize,
        k: usize,
        last_failure: String,
    },

    #[error("sparse penalty {lambda} zeroed out discriminative direction {direction}")]
    SparseDirectionZero { direction: usize, lambda: f64 },

    #[error("label vectors have mismatched lengths ({left} vs {right})")]
    LabelLengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("selection grid error: {0}")]
    InvalidGrid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
