//! Crate wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgektError {
    /// Malformed interaction log content. `row` counts data rows from 1.
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Structural problems in otherwise well formed input.
    #[error("invalid data: {0}")]
    Data(String),

    /// Rejected configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Tensor operation applied to incompatible shapes.
    #[error("shape mismatch in {op}: left is {lhs}, right is {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// Malformed or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DgektError>;

impl DgektError {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        DgektError::Shape {
            op,
            lhs: format!("{}x{}", lhs.0, lhs.1),
            rhs: format!("{}x{}", rhs.0, rhs.1),
        }
    }
}
