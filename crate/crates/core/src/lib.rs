//! Inductive link prediction over knowledge graphs by attending along the
//! dependency order of relations.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod config;
pub mod entity_encoder;
pub mod error;
pub mod eval;
pub mod kg;
pub mod objective;
pub mod optim;
pub mod params;
pub mod preprocess;
pub mod rdg;
pub mod relation_encoder;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{CheckpointError, DataError, Error, NumericError, Result};
