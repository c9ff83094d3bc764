use std::path::PathBuf;

/// Errors produced by the explanation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid neuron {layer}:{unit}: {reason}")]
    InvalidNeuron {
        layer: String,
        unit: usize,
        reason: String,
    },

    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("class out of range: {class} (model has {classes} classes)")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("model has no linear classifier head")]
    NoLinearHead,

    #[error("unit {layer}:{unit} is already ablated")]
    AlreadyAblated { layer: String, unit: usize },

    #[error("unit {layer}:{unit} is not ablated")]
    NotAblated { layer: String, unit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("cache payload corrupt for key {key}: checksum mismatch")]
    CacheCorrupt { key: String },

    #[error("empty class name")]
    EmptyClassName,

    #[error("LLM request failed after {attempts} attempts: {message}")]
    LlmTimeout { attempts: u32, message: String },

    #[error("unparseable LLM reply for class {class:?}: no list items found\n--- raw reply ---\n{raw}")]
    UnparseableReply { class: String, raw: String },

    #[error("missing fixture for class {class:?} at {}", .path.display())]
    MissingFixture { class: String, path: PathBuf },

    #[error("all descriptor lists are empty")]
    EmptyVocabulary,

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("embedder failure: {0}")]
    Embedder(String),

    #[error("empty patch set")]
    EmptyPatchSet,

    #[error("corpus has no labels")]
    Unlabeled,

    #[error("io error at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error at {}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
