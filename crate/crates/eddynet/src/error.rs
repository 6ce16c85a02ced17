use thiserror::Error;

/// Crate-wide error type.
///
/// File-format problems get their own variants so callers (and the CLI exit
/// paths) can tell a truncated file from a checksum failure or a model/config
/// mismatch.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("layer mismatch: {0}")]
    LayerMismatch(String),

    #[error("variant mismatch: file holds {found}, expected {expected}")]
    VariantMismatch { expected: String, found: String },

    #[error("batch normalization has no moving statistics yet; run at least one training batch or load trained weights")]
    UninitializedBatchNorm,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("grid {rows}x{cols} is smaller than the requested {patch}x{patch} patch")]
    GridTooSmall {
        rows: usize,
        cols: usize,
        patch: usize,
    },

    #[error("test pool holds {pool} patches, fewer than the set size {set_size}")]
    PoolTooSmall { pool: usize, set_size: usize },

    #[error("could not place {requested} non-overlapping eddies after {attempts} attempts")]
    PackingFailed { requested: usize, attempts: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
