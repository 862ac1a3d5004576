use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector in cosine similarity")]
    ZeroNormVector,

    #[error("embedding dimension mismatch: expected {expected}, found {found}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: Option<String>,
    },

    #[error("prototype count mismatch: expected K={expected}, found K={found}")]
    MismatchedK { expected: usize, found: usize },

    #[error("invalid prototype count K={0}")]
    InvalidK(usize),

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate candidate id {0:?} in ranked list")]
    DuplicateCandidate(String),

    #[error("relevance set is empty")]
    EmptyRelevance,

    #[error("macro aggregation requires a class label for every query (missing for {0:?})")]
    MissingLabels(String),

    #[error("{path}: bad magic {found:?}, expected \"PECM\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {found}")]
    VersionMismatch { path: PathBuf, found: u16 },

    #[error("{path}: truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },

    #[error("{path}: malformed file at {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("pairing line {line}: report {report_id:?} -> image {image_id:?} does not resolve ({missing} missing)")]
    DanglingPairing {
        line: usize,
        report_id: String,
        image_id: String,
        missing: &'static str,
    },

    #[error("corpus invariant violated: {0}")]
    InvalidCorpus(String),

    #[error("checkpoint parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint has K={found} but K={expected} was expected")]
    KMismatch { expected: usize, found: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            context: None,
        }
    }
}
