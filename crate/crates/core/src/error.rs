use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest schema error: missing required column `{column}`")]
    MissingColumn { column: String },

    #[error("manifest row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("manifest `{0}` has no data rows")]
    EmptyManifest(PathBuf),

    #[error("cannot split: need at least 2 distinct patients, found {found}")]
    CannotSplit { found: usize },

    #[error("failed to load image `{path}`: {message}")]
    ImageLoad { path: PathBuf, message: String },

    #[error("shape mismatch: expected {expected}, received {received}")]
    Shape { expected: String, received: String },

    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pretrained weights for {arch} unavailable: {message}")]
    WeightFetch { arch: String, message: String },

    #[error("checkpoint `{path}`: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: String, expected: String },

    #[error("label order mismatch: checkpoint has {found:?}, expected {expected:?}")]
    LabelOrder {
        found: Vec<String>,
        expected: Vec<String>,
    },

    #[error("`{0}` not found")]
    NotFound(PathBuf),

    #[error(
        "validation AUROC is undefined for every label (each label is single-class in the \
         validation set); use a larger or differently seeded split"
    )]
    DegenerateValidation,

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid score at index {index}: {value}")]
    InvalidScore { index: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, received: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            received: received.to_string(),
        }
    }

    /// True for failures caused by the caller's inputs (files, configuration),
    /// as opposed to failures inside a computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn { .. }
                | Error::Row { .. }
                | Error::EmptyManifest(_)
                | Error::CannotSplit { .. }
                | Error::ImageLoad { .. }
                | Error::Config(_)
                | Error::WeightFetch { .. }
                | Error::Checkpoint { .. }
                | Error::CheckpointVersion { .. }
                | Error::LabelOrder { .. }
                | Error::NotFound(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
