use thiserror::Error;

/// Errors produced by tensor construction, graph operations and optimizers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Incompatible shapes for an operation; the message names the operation
    /// and the offending dimension.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation received or produced a non-finite value where finiteness
    /// is required (e.g. the loss passed to `backward`).
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

impl CoreError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
