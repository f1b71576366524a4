use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: schema violation in field `{field}`: {message}")]
    Schema {
        file: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{file}:{line}: duplicate annotation for item `{item_id}` by annotator `{annotator_id}`")]
    DuplicateAnnotation {
        file: String,
        line: usize,
        item_id: String,
        annotator_id: String,
    },

    #[error("invalid label space: {0}")]
    LabelSpace(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("unknown split `{0}`")]
    UnknownSplit(String),

    #[error("item `{0}` has no annotations")]
    NoAnnotations(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("metric `{metric}` does not apply to {kind} label spaces")]
    MetricSpace { metric: &'static str, kind: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("missing embedding for item `{0}`")]
    MissingEmbedding(String),

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("missing prompt field `{0}`")]
    MissingPromptField(&'static str),

    #[error("annotator `{0}` has no training history")]
    MissingHistory(String),

    #[error("backend authentication failed: {0}")]
    Auth(String),

    #[error("backend retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },

    #[error("backend rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },

    #[error("malformed backend response: {0}")]
    MalformedResponse(String),

    #[error("pair ({item_id}, {annotator_id}): {source}")]
    Pair {
        item_id: String,
        annotator_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cache error: {0}")]
    Cache(String),

    #[error("json error: {0}")]
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
