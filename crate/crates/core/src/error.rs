use std::io;

/// Errors raised across the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was handed data that violates its documented precondition
    /// (for example a beamforming matrix that was never phase-normalized).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Bitstream or frame length does not match what the header or scheme implies.
    #[error("framing error: {0}")]
    Framing(String),

    /// Frame header fields disagree with the payload they describe.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Malformed persisted file (dataset, checkpoint, dump).
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn format_err(offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}
