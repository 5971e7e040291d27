use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("region has zero area after clamping to a {width}x{height} image")]
    EmptyRegion { width: u32, height: u32 },

    #[error("invalid region ({x0}, {y0}, {x1}, {y1}): {reason}")]
    InvalidRegion {
        x0: i64,
        y0: i64,
        x1: i64,
        y1: i64,
        reason: &'static str,
    },

    #[error("masking strategy requires at least one region")]
    NoRegions,

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid guidance config: {0}")]
    InvalidConfig(String),

    #[error("token sequence has {ids} ids but {pieces} pieces")]
    TokenSequenceLength { ids: usize, pieces: usize },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend error ({status}): {error}: {detail}")]
    BackendRejected {
        status: u16,
        error: String,
        detail: String,
    },

    #[error("malformed backend response: {0}")]
    BackendProtocol(String),

    #[error("vocabulary mismatch: expected {expected} entries, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },

    #[error("logit vector contains a non-finite value at index {index}")]
    NonFiniteLogits { index: usize },

    #[error("operation not supported by backend: {0}")]
    UnsupportedOperation(&'static str),

    #[error("original and masked images tokenized the continuation differently")]
    TokenizationMismatch,

    #[error("backend cannot identify the affirmative token")]
    AffirmativeTokenUnknown,

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("span [{start}, {end}) is empty or exceeds continuation length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: normalized coordinates need image_width and image_height")]
    MissingImageDimensions { path: PathBuf, line: usize },

    #[error("no input to evaluate")]
    EmptyInput,

    #[error("AUROC needs both positive and negative labels")]
    DegenerateLabels,

    #[error("{failed} of {total} examples failed, above the abort fraction")]
    TooManyFailures { failed: usize, total: usize },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in the logit provider.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable(_)
                | Error::BackendRejected { .. }
                | Error::BackendProtocol(_)
                | Error::VocabMismatch { .. }
                | Error::NonFiniteLogits { .. }
                | Error::UnsupportedOperation(_)
                | Error::TokenizationMismatch
                | Error::AffirmativeTokenUnknown
        )
    }
}
