use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core and the model runtime.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite entry at ({row}, {col}) of a {rows}x{cols} matrix")]
    NonFinite {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("SVD of a {rows}x{cols} matrix did not converge after {sweeps} sweeps")]
    NoConvergence { rows: usize, cols: usize, sweeps: usize },

    #[error("rank {k} out of range: must be in 1..={max} ({context})")]
    RankOutOfRange {
        k: usize,
        max: usize,
        context: &'static str,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("effective rank undefined for an all-zero spectrum")]
    ZeroSpectrum,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cached image for `{weight_id}` was built against basis {cached}, current basis is {current}; rebuild the image")]
    StaleImage {
        weight_id: String,
        cached: String,
        current: String,
    },

    #[error("no calibrated basis for layer {layer}; run calibration before non-baseline execution")]
    MissingBasis { layer: usize },

    #[error("token id {token} at position {position} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, position: usize, vocab: usize },

    #[error("context overflow: {requested} positions requested, model supports {max_seq}")]
    ContextOverflow { requested: usize, max_seq: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Failures reading or writing the tensor container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("unknown dtype `{dtype}` for tensor `{name}`")]
    UnknownDtype { name: String, dtype: String },

    #[error("tensor `{name}`: shape {shape:?} needs {expected} bytes, manifest declares {declared}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: u64,
        declared: u64,
    },

    #[error("tensor `{name}` at offset {offset} is not {align}-byte aligned")]
    Misaligned { name: String, offset: u64, align: u64 },

    #[error("tensor `{name}` spans bytes {start}..{end} but the blob has only {blob_len}")]
    Truncated {
        name: String,
        start: u64,
        end: u64,
        blob_len: u64,
    },

    #[error("tensors `{first}` and `{second}` overlap in the blob")]
    Overlap { first: String, second: String },

    #[error("duplicate tensor `{0}`")]
    Duplicate(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    UnexpectedShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("manifest lists {declared} tensors but {actual} were expected; first unexpected or missing: `{name}`")]
    TensorCount {
        declared: usize,
        actual: usize,
        name: String,
    },

    #[error("tensor `{name}` contains a non-finite value")]
    NonFinite { name: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
