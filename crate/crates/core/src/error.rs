use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single record that failed to parse during ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRecord {
    /// 1-based line number in the source file (header counts as line 1 for CSV).
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for MalformedRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// Coarse error category, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Provider,
    Model,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Provider => 4,
            ErrorCategory::Model => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Provider => "provider",
            ErrorCategory::Model => "model",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown format `{0}`")]
    UnknownFormat(String),
    #[error("{} malformed record(s): {}", .0.len(), .0.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("; "))]
    Malformed(Vec<MalformedRecord>),
    #[error("unmapped label `{label}` for deployment `{deployment}`")]
    UnmappedLabel { label: String, deployment: String },
    #[error("invalid deployment mapping: {0}")]
    InvalidDeployment(String),
    #[error("report `{0}` not found in corpus")]
    UnknownReport(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("missing embedding for content hash {0}")]
    MissingEmbedding(String),
    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("sentiment triple ({0}, {1}, {2}) is not on the probability simplex")]
    SimplexViolation(f64, f64, f64),
    #[error("model tag mismatch: expected `{expected}`, found `{found}`")]
    ModelTagMismatch { expected: String, found: String },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("provider error for report `{id}`: {source}")]
    ForReport {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("non-finite value in feature matrix at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label `{0}` is not known to the model")]
    UnknownLabel(String),
    #[error("missing class weight for label `{0}`")]
    MissingClassWeight(String),
    #[error("negative feature value at row {row}, column {col}; naive Bayes requires non-negative counts")]
    NegativeFeature { row: usize, col: usize },
    #[error("feature standardization statistics are absent")]
    MissingStandardizer,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("bundle schema version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("class `{label}` has {count} member(s); stratified split needs at least 3")]
    ClassTooSmall { label: String, count: usize },
    #[error("prediction and gold id sets differ: {0}")]
    IdMismatch(String),
    #[error("run {index} failed: {source}")]
    RunFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("unknown error tag `{0}`")]
    UnknownTag(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io { .. }
            | UnknownFormat(_)
            | Malformed(_)
            | UnmappedLabel { .. }
            | InvalidDeployment(_)
            | UnknownReport(_)
            | EmptyCorpus
            | InvalidData(_)
            | ClassTooSmall { .. }
            | IdMismatch(_)
            | UnknownTag(_)
            | Json(_) => ErrorCategory::Data,
            MissingEmbedding(_)
            | Transport { .. }
            | SimplexViolation(..)
            | ModelTagMismatch { .. }
            | InvalidEmbedding(_) => ErrorCategory::Provider,
            ForReport { source, .. } | RunFailed { source, .. } => source.category(),
            TooFewClasses(_)
            | NonFinite { .. }
            | DimensionMismatch { .. }
            | UnknownLabel(_)
            | MissingClassWeight(_)
            | NegativeFeature { .. }
            | MissingStandardizer
            | InvalidModel(_)
            | VersionMismatch { .. }
            | Corrupt { .. } => ErrorCategory::Model,
            Config(_) => ErrorCategory::Config,
        }
    }
}
