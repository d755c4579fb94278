use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("invalid sampler configuration: {0}")]
    Sampler(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("group `{0}` is not labeled in this batch")]
    GroupNotLabeled(&'static str),

    #[error("invalid loss config: {0}")]
    InvalidLossConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("budget {budget} exceeds {available} available rows")]
    BudgetTooLarge { budget: usize, available: usize },

    #[error("instance too large for exhaustive search ({0} subsets)")]
    InstanceTooLarge(u128),

    #[error("empty labeled set")]
    EmptyLabeled,

    #[error("silhouette requires at least two non-empty clusters")]
    SingleCluster,

    #[error("bad magic bytes in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("row count mismatch: header says {header}, metadata has {meta}")]
    CountMismatch { header: usize, meta: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
