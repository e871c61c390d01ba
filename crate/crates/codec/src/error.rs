//! Error type shared across the codec crate.

use thiserror::Error;

/// Errors produced by codec components.
///
/// Variants are grouped by failure domain so callers (notably the CLI) can
/// map them to distinct exit codes without string matching.
#[derive(Debug, Error)]
pub enum CodecError {
    /// Propagated tensor-engine failure (shape mismatch, non-finite value).
    #[error("core: {0}")]
    Core(#[from] envc_core::CoreError),

    /// Underlying I/O failure while reading or writing a file.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists and was read, but its contents do not parse as the
    /// expected format (video container, image, checkpoint, CSV).
    #[error("format: {0}")]
    Format(String),

    /// A bitstream is malformed: bad magic, unsupported version, truncated
    /// chunk, or a failed integrity guard after entropy decoding.
    #[error("bitstream: {0}")]
    Stream(String),

    /// A checkpoint does not match what the operation requires (wrong model
    /// kind, wrong channel widths, or a bitstream/checkpoint identity
    /// mismatch).
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Invalid configuration: unknown key, out-of-range value, or an option
    /// combination the pipeline cannot honor.
    #[error("config: {0}")]
    Config(String),

    /// Input data has unusable dimensions (empty video, frame size mismatch
    /// within a sequence, crop larger than frame).
    #[error("dimension: {0}")]
    Dimension(String),

    /// Training-loop failure: stage ordering violation, empty clip set, or a
    /// loss that never becomes finite.
    #[error("train: {0}")]
    Train(String),
}

impl CodecError {
    pub fn format(msg: impl Into<String>) -> Self {
        CodecError::Format(msg.into())
    }

    pub fn stream(msg: impl Into<String>) -> Self {
        CodecError::Stream(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CodecError::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        CodecError::Dimension(msg.into())
    }

    pub fn checkpoint_mismatch(msg: impl Into<String>) -> Self {
        CodecError::CheckpointMismatch(msg.into())
    }

    pub fn train(msg: impl Into<String>) -> Self {
        CodecError::Train(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CodecError>;
