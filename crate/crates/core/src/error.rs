use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FairError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FairError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown category `{value}` in column `{column}`")]
    UnknownCategory { column: String, value: String },

    #[error("label column `{column}` is not binary: {detail}")]
    NonBinaryLabel { column: String, detail: String },

    #[error("no rows")]
    NoRows,

    #[error("expected counts do not match: {}", .0.join("; "))]
    CountMismatch(Vec<String>),

    #[error("empty cell: group {group} has no rows satisfying the conditioning event")]
    EmptyCell { group: usize },

    #[error("need at least {needed} evaluable groups, found {found}")]
    TooFewGroups { needed: usize, found: usize },

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("super attribute would have {count} values, cap is {cap}")]
    SuperAttributeTooLarge { count: usize, cap: usize },

    #[error("attribute `{0}` has fewer than two observed values and cannot be perturbed")]
    Unperturbable(String),

    #[error("discriminative risk needs a re-predictable model; predictions came from an external file")]
    ExternalPredictions,

    #[error("scores are required but not available")]
    MissingScores,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown metric id `{0}`")]
    UnknownMetric(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("undefined: {0}")]
    Undefined(String),
}

impl FairError {
    /// Maps a csv error, keeping the path for i/o failures.
    pub(crate) fn from_csv(path: &std::path::Path, e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                return FairError::io(path, io);
            }
            unreachable!("io error kind checked above");
        }
        FairError::Csv(e)
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FairError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        FairError::InvalidArgument(msg.into())
    }
}
