//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("graph build requires at least one triple")]
    EmptyGraph,

    #[error("invalid entity id {0} (graph has {1} entities)")]
    InvalidEntityId(u32, usize),

    #[error("invalid relation id {0} (graph has {1} relations)")]
    InvalidRelationId(u32, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("token id {0} out of range (vocabulary size {1})")]
    TokenOutOfRange(u32, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("nothing to train: max_epochs is 0")]
    NothingToTrain,

    #[error("gold entity is in the filter set (protocol violation)")]
    GoldFiltered,

    #[error("non-finite score encountered during ranking")]
    NonFiniteScore,

    #[error("not a checkpoint file (bad magic bytes)")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedCheckpointVersion(u32),

    #[error("checkpoint file is truncated or corrupt: {0}")]
    CorruptCheckpoint(String),

    #[error("not a context cache file (bad magic bytes)")]
    NotAContextCache,

    #[error("unsupported context cache version {0}")]
    UnsupportedCacheVersion(u32),

    #[error("context cache is truncated or corrupt: {0}")]
    CorruptCache(String),

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("top_k must be at least 1")]
    InvalidTopK,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
