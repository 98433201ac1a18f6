use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss in batch {batch}")]
    NonFiniteBatch { batch: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("correlation undefined: {0} is constant")]
    ConstantInput(&'static str),

    #[error("missing score `{measure}` for example {id}")]
    MissingScore { measure: String, id: String },

    #[error("row {row} is not a probability vector (sum {sum})")]
    NotProbabilities { row: usize, sum: f64 },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("holdout and training split share {count} ids (e.g. `{example}`)")]
    IdOverlap { count: usize, example: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("inconsistent feature dimension: `{first_id}` has {first_dim}, `{id}` has {dim}")]
    InconsistentDimension {
        first_id: String,
        first_dim: usize,
        id: String,
        dim: usize,
    },

    #[error("hsf value {value} for `{id}` outside [0, 1]")]
    HsfOutOfRange { id: String, value: f64 },

    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("malformed document {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("infeasible class-center separation: {0}")]
    InfeasibleSeparation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
