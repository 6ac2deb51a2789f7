use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any stage of the pipeline.
///
/// Variants are grouped so a caller (the CLI in particular) can map them to
/// coarse categories: invalid configuration, bad input data, or a run that
/// started and then failed.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse failure in {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error("non-numeric cell at row {row}, column {column}")]
    NonNumericCell { row: usize, column: String },

    #[error("non-finite cell at row {row}, column {column}")]
    NonFiniteCell { row: usize, column: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("split part {part} has length {len}, needs at least {needed} for lookback+horizon")]
    SplitTooShort {
        part: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("shape search failed: {0}")]
    Search(String),

    #[error("missing artifacts in {dir}: expected one of {expected}")]
    MissingArtifacts { dir: PathBuf, expected: String },

    #[error("corrupt artifact {path}: {detail}")]
    CorruptArtifact { path: PathBuf, detail: String },
}

impl Error {
    /// True for errors caused by unreadable or malformed input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv { .. }
                | Error::NonNumericCell { .. }
                | Error::NonFiniteCell { .. }
                | Error::Data(_)
                | Error::MissingArtifacts { .. }
                | Error::CorruptArtifact { .. }
        )
    }
}
