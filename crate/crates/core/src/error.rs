use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector{}", .0.as_deref().map(|id| format!(" (id {id})")).unwrap_or_default())]
    ZeroVector(Option<String>),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite component at index {0}")]
    NonFinite(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("objective is not strongly convex (curvature {0})")]
    NotStronglyConvex(f64),

    #[error("empty query")]
    EmptyQuery,

    #[error("could not parse decomposition: {0}")]
    Parse(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty list")]
    EmptyList,

    #[error("empty input")]
    EmptyInput,

    #[error("format error in {}{}: {message}", path.display(), line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("no cached decomposition for query {0}")]
    MissingDecomposition(String),

    #[error("no embedding available for text {0:?}")]
    MissingEmbedding(String),

    #[error("no relevant document for query {0}")]
    MissingGold(String),

    #[error("data mismatch: {0}")]
    Mismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Stable short name, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroVector(_) => "ZeroVector",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::InsufficientData(_) => "InsufficientData",
            Error::NotStronglyConvex(_) => "NotStronglyConvex",
            Error::EmptyQuery => "EmptyQuery",
            Error::Parse(_) => "ParseError",
            Error::Transport(_) => "TransportError",
            Error::EmptyBatch => "EmptyBatch",
            Error::EmptyList => "EmptyList",
            Error::EmptyInput => "EmptyInput",
            Error::Format { .. } => "FormatError",
            Error::DuplicateId(_) => "DuplicateId",
            Error::MissingDecomposition(_) => "MissingDecomposition",
            Error::MissingEmbedding(_) => "MissingEmbedding",
            Error::MissingGold(_) => "MissingGold",
            Error::Mismatch(_) => "Mismatch",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
