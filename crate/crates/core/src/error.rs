use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HadError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch for sample {id}: {detail}")]
    DimensionMismatch { id: String, detail: String },

    #[error("corrupt dataset: expected {expected} bytes in features file, found {actual}")]
    CorruptDataset { expected: u64, actual: u64 },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("no samples")]
    NoSamples,

    #[error("missing {0}")]
    Missing(String),
}

impl HadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json { context: context.into(), source }
    }

    /// Stable, machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Json { .. } => "json",
            Self::EmptyDataset => "empty-dataset",
            Self::DimensionMismatch { .. } => "dimension-mismatch",
            Self::CorruptDataset { .. } => "corrupt-dataset",
            Self::InvalidManifest(_) => "invalid-manifest",
            Self::InvalidConfig(_) => "invalid-config",
            Self::Contract(_) => "contract",
            Self::Schedule(_) => "schedule",
            Self::NonFinite { .. } => "non-finite",
            Self::NoSamples => "no-samples",
            Self::Missing(_) => "missing",
        }
    }
}
