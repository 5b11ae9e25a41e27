//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A binary operation received operands with incompatible shapes.
    #[error("{op}: shape mismatch, lhs is {lhs_rows}x{lhs_cols}, rhs is {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A scalar or structural argument was out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration parsing or validation failed.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("numerical failure: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    /// Checkpoint encoding/decoding failed; the message names the offending field.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Tape misuse (non-scalar loss, unknown node, backward before forward).
    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape_mismatch(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }
}
