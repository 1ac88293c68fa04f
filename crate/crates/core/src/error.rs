use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A box with non-positive width or height, or non-finite coordinates.
    #[error("degenerate box ({x0}, {y0}, {x1}, {y1})")]
    DegenerateBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    /// A pooling bin with non-positive extent.
    #[error("degenerate bin ({x1}, {y1}, {x2}, {y2})")]
    DegenerateBin { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("channel {channel} out of range for a map with {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },

    /// Any other violated precondition on an argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    #[error("{0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
