use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("vector norm is below the zero threshold")]
    ZeroVector,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("embeddings need at least 2 dimensions, got {0}")]
    BadDimension(usize),

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("need at least {needed} observations, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("stage machine needs at least one stage")]
    EmptyStages,

    #[error("sequence needs at least 2 elements")]
    TooShort,

    #[error("noise energy is zero; SNR is unbounded")]
    DegenerateNoise,

    #[error("viewpoint model has no offsets")]
    EmptyOffsets,

    #[error("invalid action index {0}")]
    InvalidAction(usize),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("dataset pairing invariant violated: {0}")]
    Pairing(String),

    #[error("training diverged at stage {stage}, epoch {epoch}")]
    Diverged { stage: usize, epoch: usize },

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown entry kind byte {0}")]
    BadKind(u8),

    #[error("{0} trailing bytes after metadata")]
    TrailingBytes(usize),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("missing id {0:?}")]
    MissingId(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("bad response: {0}")]
    BadResponse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    ok: bool,
    range: &'static str,
) -> Result<()> {
    if ok && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value, range })
    }
}
