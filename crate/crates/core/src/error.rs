use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },

    #[error("{what} value {value} outside physiologic range ({lo}, {hi})")]
    RangeViolation {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("label count {found} does not match signal duration (expected {expected})")]
    LabelMismatch { expected: usize, found: usize },

    #[error("empty window")]
    EmptyWindow,

    #[error("need at least {needed} inter-beat intervals, got {got}")]
    InsufficientBeats { needed: usize, got: usize },

    #[error("epoch {epoch} lacks enough trailing history: {reason}")]
    InsufficientHistory { epoch: usize, reason: &'static str },

    #[error("feature column {column} has zero variance{scope}")]
    DegenerateFeature { column: usize, scope: String },

    #[error("unknown subject {0:?} in per-subject scaler")]
    UnknownSubject(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad magic bytes")]
    BadMagic,

    #[error("checksum mismatch")]
    ChecksumMismatch,

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("fold {fold} lacks class {class}")]
    FoldTooSmall { fold: usize, class: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bad phase model: {0}")]
    BadModel(String),

    #[error("arena too small: need {needed} bytes, have {have}")]
    ArenaTooSmall { needed: usize, have: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            line,
            reason: reason.into(),
        }
    }

    /// Stable machine-readable category, used by the CLI's single-line error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::MalformedFile { .. } => "MalformedFile",
            Error::RangeViolation { .. } => "RangeViolation",
            Error::LabelMismatch { .. } => "LabelMismatch",
            Error::EmptyWindow => "EmptyWindow",
            Error::InsufficientBeats { .. } => "InsufficientBeats",
            Error::InsufficientHistory { .. } => "InsufficientHistory",
            Error::DegenerateFeature { .. } => "DegenerateFeature",
            Error::UnknownSubject(_) => "UnknownSubject",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EmptyDataset => "EmptyDataset",
            Error::BadMagic => "BadMagic",
            Error::ChecksumMismatch => "ChecksumMismatch",
            Error::TopologyMismatch(_) => "TopologyMismatch",
            Error::FoldTooSmall { .. } => "FoldTooSmall",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyInput => "EmptyInput",
            Error::InsufficientData(_) => "InsufficientData",
            Error::BadModel(_) => "BadModel",
            Error::ArenaTooSmall { .. } => "ArenaTooSmall",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
