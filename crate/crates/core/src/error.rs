//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `sigma^2 I - tau^2 X X^T` failed its positive-definiteness check,
    /// typically because an explicit `tau^2` exceeds `sigma^2 / lambda_max(X X^T)`.
    #[error("covariance sigma^2 I - tau^2 X X^T is not positive definite (tau^2 too large)")]
    NonPositiveSigma,

    #[error("matrix factorization failed: {0}")]
    FactorizationFailed(String),

    /// A chain iterate or gradient picked up a NaN/Inf. Carries enough of the
    /// iterate state to locate the blow-up.
    #[error("non-finite {what} at iteration {iter} (max |phi| = {max_abs:e})")]
    NonFinite {
        what: &'static str,
        iter: usize,
        max_abs: f64,
    },

    #[error("preconditioner not built; construct the context with a preconditioner first")]
    PreconditionerMissing,

    #[error("supports of the two grid priors differ")]
    GridMismatch,

    #[error("KL divergence is infinite: comparison measure puts mass on an atom with zero reference weight")]
    InfiniteKl,

    #[error("signal X theta has zero sample variance; cannot calibrate noise")]
    ZeroSignalVariance,

    #[error("denominator ||X_new theta_star||^2 is zero")]
    ZeroDenominator,

    #[error("empty iterate stream")]
    EmptyStream,

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("parse error at {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Whether this error signals a numerical failure (as opposed to bad
    /// input or I/O), used by callers to map onto exit codes.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveSigma
                | Error::FactorizationFailed(_)
                | Error::NonFinite { .. }
                | Error::InfiniteKl
                | Error::ZeroSignalVariance
                | Error::ZeroDenominator
        )
    }
}
