use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input length error: need {needed} bits, got {got}")]
    InputLength { needed: usize, got: usize },

    #[error(
        "bounds error: offset {offset} + frame length {len} exceeds sequence length {available}"
    )]
    Bounds {
        offset: usize,
        len: usize,
        available: usize,
    },

    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("corrupt payload: index {index} at position {position} is not below {limit}")]
    Corruption {
        index: u32,
        position: usize,
        limit: u32,
    },

    #[error("training diverged at stage {stage}, level {level}, epoch {epoch}: {detail}")]
    Divergence {
        stage: String,
        level: usize,
        epoch: usize,
        detail: String,
    },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Stable short name used by the CLI and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InputLength { .. } => "input_length",
            Error::Bounds { .. } => "bounds",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite { .. } => "non_finite",
            Error::State(_) => "state",
            Error::Format(_) => "format",
            Error::Integrity(_) => "integrity",
            Error::Corruption { .. } => "corruption",
            Error::Divergence { .. } => "divergence",
            Error::Analysis(_) => "analysis",
            Error::Io(_) => "io",
        }
    }
}
