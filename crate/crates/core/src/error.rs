use thiserror::Error;

/// Errors produced by the watermarking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel count {channels} for embedding dimension {dimension}")]
    InvalidChannelCount { channels: usize, dimension: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("too few samples for detection: {sentences} sentence(s) across {channels} channel(s)")]
    TooFewSamples { sentences: usize, channels: usize },

    #[error("alignment matrix has zero variance")]
    ZeroVariance,

    #[error("false-positive rate must lie strictly between 0 and 1, got {0}")]
    InvalidRate(f64),

    #[error("null score list is empty")]
    EmptyNull,

    #[error("score list is empty")]
    EmptyList,

    #[error("substitution lexicon is empty")]
    EmptyLexicon,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("remote service error: {0}")]
    Remote(String),

    #[error("remote request timed out")]
    Timeout,

    #[error("backend error: {0}")]
    Backend(String),
}

impl Error {
    /// Stable variant name, used when errors are recorded in output files.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidChannelCount { .. } => "InvalidChannelCount",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::EmptyPool => "EmptyPool",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::ZeroVariance => "ZeroVariance",
            Error::InvalidRate(_) => "InvalidRate",
            Error::EmptyNull => "EmptyNull",
            Error::EmptyList => "EmptyList",
            Error::EmptyLexicon => "EmptyLexicon",
            Error::Config(_) => "ConfigError",
            Error::Remote(_) => "RemoteError",
            Error::Timeout => "Timeout",
            Error::Backend(_) => "BackendError",
        }
    }

    /// True for failures of an external backend (embedding or sampling service).
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Remote(_) | Error::Timeout | Error::Backend(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
