use std::path::PathBuf;

/// What was wrong with a WEM1 embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    TruncatedHeader,
    ZeroDim,
    BadNormalizedFlag,
    TruncatedRecord,
    EmptyId,
    InvalidUtf8,
    IdTooLong,
    NonFinite,
    DuplicateId,
    NotNormalized,
    DimMismatch,
    TrailingBytes,
}

/// Errors produced anywhere in the engine.
///
/// Variants are grouped by how the command line reports them: domain and
/// configuration problems exit with status 1, I/O and file-format problems
/// with status 2 (see [`WcaError::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum WcaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing embedding for id {0:?}")]
    MissingEmbedding(String),

    #[error("crop {n}x{n} at ({left}, {top}) does not fit a {width}x{height} image")]
    Bounds {
        left: usize,
        top: usize,
        n: usize,
        width: usize,
        height: usize,
    },

    #[error("description file {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    #[error("format error in {path} at byte {offset} ({kind:?}): {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        kind: FormatErrorKind,
        message: String,
    },

    #[error("cache {path} is invalid: {message}")]
    CacheInvalid { path: PathBuf, message: String },

    #[error("explanation unavailable: {0}")]
    ExplanationUnavailable(String),

    #[error("theorem instance construction failed after {attempts} attempts; most frequent failure: {invariant}")]
    Construction { attempts: usize, invariant: String },

    #[error("image {id:?}: {source}")]
    Image {
        id: String,
        #[source]
        source: Box<WcaError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
}

pub type Result<T, E = WcaError> = std::result::Result<T, E>;

impl WcaError {
    pub fn domain(msg: impl Into<String>) -> Self {
        WcaError::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        WcaError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WcaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_image(self, id: &str) -> Self {
        match self {
            e @ WcaError::Image { .. } => e,
            other => WcaError::Image {
                id: id.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// Process exit status for this error: 2 for I/O and format failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            WcaError::Io { .. }
            | WcaError::Format { .. }
            | WcaError::Decode { .. }
            | WcaError::Ingestion { .. }
            | WcaError::CacheInvalid { .. } => 2,
            WcaError::Image { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
