use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mask has no foreground voxels")]
    EmptyMask,

    #[error("empty point set: {0}")]
    EmptySet(&'static str),

    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u64 },

    #[error("mesh is not watertight: {rays} rays ended with odd crossing parity")]
    ParityInconsistency { rays: usize },

    #[error("predictor returned {got} instances for a window of {expected}")]
    WindowSize { expected: usize, got: usize },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptFile(msg.into())
    }
}
