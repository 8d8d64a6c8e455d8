use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("label {label} out of range for {num_classes} classes (row {row})")]
    LabelRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("class {class} has {count} sample(s); at least 2 required")]
    ClassInsufficient { class: usize, count: usize },

    #[error("all calibration scores identical; fall back to uniform 0.5")]
    FlatCalibration,

    #[error("missing model for class {0}")]
    MissingClassModel(usize),

    #[error("value {value} outside [0, 1]")]
    ScoreRange { value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
