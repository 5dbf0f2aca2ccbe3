//! Crate-wide error type.

use crate::resource::AllocationResult;

/// Errors produced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched vector/matrix dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Structurally invalid argument (empty set, zero count, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Dataset parsing or partitioning failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// I/O failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// The dual power-allocation iteration hit its iteration cap.
    /// Carries the last iterate so callers can degrade gracefully.
    #[error("power allocation did not converge after {iterations} iterations \
             (last max power change {residual_w:.3e} W)")]
    NonConvergence {
        iterations: usize,
        residual_w: f64,
        last: Box<AllocationResult>,
    },

    /// Aggregation was asked to combine an empty set of models.
    #[error("aggregation requires at least one selected client")]
    EmptyAggregation,
}

pub type Result<T> = std::result::Result<T, Error>;
