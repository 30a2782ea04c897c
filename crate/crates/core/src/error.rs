use std::io;

use thiserror::Error;

/// Errors raised while reading or assembling knowledge-graph data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    Malformed { line: usize, found: usize },
    #[error("line {line}: unknown {kind} `{name}`")]
    UnknownName {
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("triple {index}: {what} id {id} out of range (limit {limit})")]
    IdOutOfRange {
        index: usize,
        what: &'static str,
        id: usize,
        limit: usize,
    },
    #[error("inverse relations are already present in this graph")]
    AlreadyAugmented,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Non-finite values detected during a forward or backward pass.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("non-finite relation state at layer {layer}, head {head}")]
    RelationLayer { layer: usize, head: usize },
    #[error("non-finite entity state at layer {layer}")]
    EntityLayer { layer: usize },
    #[error("non-finite gradient in tensor `{tensor}`")]
    Gradient { tensor: String },
    #[error("non-finite loss")]
    Loss,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint payload size mismatch: {0}")]
    SizeMismatch(String),
    #[error("checkpoint dimensions {found} do not match expected {expected}")]
    DimsMismatch { found: String, expected: String },
    #[error("unknown activation tag {0}")]
    Activation(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Top-level error for the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("configuration error: {0}")]
    Config(String),
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Data(DataError::Io(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
