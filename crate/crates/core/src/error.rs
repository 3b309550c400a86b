use std::path::PathBuf;

use thiserror::Error;

use crate::store::Triple;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("missing split file(s) in {dir}: expected {}", .expected.join(", "))]
    MissingSplits { dir: PathBuf, expected: Vec<String> },

    #[error("{path}: {} label(s) not present in the frozen dictionaries: {}", .labels.len(), .labels.join(", "))]
    UnknownLabels { path: PathBuf, labels: Vec<String> },

    #[error("removal targets absent from the train split: {0:?}")]
    MissingTriples(Vec<Triple>),

    #[error("additions already present in the train split: {0:?}")]
    DuplicateAdditions(Vec<Triple>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("training aborted at checkpoint epoch {epoch}: {source}")]
    Checkpoint {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("entity {entity} has a non-finite embedding coordinate")]
    NonFiniteEmbedding { entity: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("neighbour index is stale: built for a different model")]
    StaleIndex,

    #[error("calibrator was fitted on a different model")]
    MismatchedCalibrator,

    #[error("no non-circular triple in the test split")]
    NoTarget,

    #[error("explanation is empty")]
    EmptyExplanation,

    #[error("unknown {kind} '{value}'")]
    UnknownVariant { kind: &'static str, value: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
