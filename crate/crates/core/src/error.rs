use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("recording too short: `{source_id}` has {n_samples} samples, window needs {window_len}")]
    RecordingTooShort {
        source_id: String,
        n_samples: usize,
        window_len: usize,
    },

    #[error("invalid window length {0}: must be even and at least 2")]
    InvalidWindowLength(usize),

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient rows for variance: need at least 2, got {0}")]
    InsufficientRows(usize),

    #[error("degenerate mask: threshold {threshold} removes all {n_features} features")]
    DegenerateMask { threshold: f64, n_features: usize },

    #[error("rank too small: k = {k} exceeds min(n_rows = {n_rows}, n_features = {n_features})")]
    RankTooSmall {
        k: usize,
        n_rows: usize,
        n_features: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tokenization mismatch: {seq_len} x {token_dim} != {len}")]
    TokenizationMismatch {
        seq_len: usize,
        token_dim: usize,
        len: usize,
    },

    #[error("no valid factorization for feature length {0}; enable padding or set token_dim")]
    NoFactorization(usize),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("class `{class}` has {count} samples; stratified split needs at least 3")]
    ClassTooSmall { class: String, count: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("missing forward trace")]
    MissingTrace,

    #[error("malformed csv {path}:{line}: {reason}")]
    MalformedCsv {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("empty file {0}")]
    EmptyFile(PathBuf),

    #[error("unknown class for {path}: {reason}")]
    UnknownClass { path: PathBuf, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid container: {0}")]
    Container(String),

    #[error("empty confusion matrix")]
    EmptyMatrix,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
