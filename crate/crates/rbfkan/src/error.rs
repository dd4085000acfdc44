//! Crate-wide error type.

use thiserror::Error;

use crate::training::TrainRecord;

/// Errors produced by any module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a documented precondition (bad argument, shape
    /// mismatch, invalid configuration value).
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix was singular to working precision. Usually means the
    /// ridge parameter is too small or the data contains duplicates.
    #[error("matrix singular to working precision: {0}")]
    NumericalRank(String),

    /// Every candidate shape parameter failed during the LOOCV search.
    #[error("shape parameter search failed: {0}")]
    SearchFailed(String),

    /// The auxiliary 1D problem collapsed to fewer than two distinct points.
    #[error("degenerate auxiliary data: {0}")]
    DegenerateData(String),

    /// A forward pass or gradient produced a non-finite value. When the
    /// divergence happened inside a training loop, the record collected up
    /// to that point is preserved.
    #[error("numerical divergence: {context}")]
    NumericalDivergence {
        context: String,
        partial_record: Option<Box<TrainRecord>>,
    },

    /// Experiment or matrix configuration could not be parsed or is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn diverged(context: impl Into<String>) -> Self {
        Error::NumericalDivergence {
            context: context.into(),
            partial_record: None,
        }
    }

    /// Process exit code class for the CLI: config problems, numerical
    /// failures and i/o failures are distinguishable by code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) => 2,
            Error::NumericalRank(_)
            | Error::SearchFailed(_)
            | Error::DegenerateData(_)
            | Error::NumericalDivergence { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
