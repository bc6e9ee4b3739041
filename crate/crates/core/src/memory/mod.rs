//! Attention kernels, the motion-compensated memory attention pass, and the
//! dual-FIFO memory bank.

mod attention;
mod bank;
mod mcma;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::types::Modality;

pub use attention::{attend, attend_multihead, attention_weights};
pub use bank::{bank_push, MemoryBank, MemoryEntry, ModalMemory};
pub use mcma::{
    compensate_memory, cross_attend_modal, encode_positions, memory_keys, self_attend, summarize, temporal_attend,
    CompensatedMemory, FeatureMap, Mcma, McmaOutput,
};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("attention over zero keys (empty memory or empty source)")]
    EmptyKeys,
    #[error("{keys} keys but {values} values")]
    KeyValueMismatch { keys: usize, values: usize },
    #[error("dimension {dim} does not split into {heads} heads")]
    HeadSplit { dim: usize, heads: usize },
    #[error("{tokens} tokens but {positions} positions")]
    PositionCount { tokens: usize, positions: usize },
    #[error("positional encodings {encodings:?} do not align with tokens {tokens:?}")]
    EncodingShape { tokens: (usize, usize), encodings: (usize, usize) },
    #[error("{entries} memory entries but {motions} ego motions")]
    MotionCount { entries: usize, motions: usize },
    #[error("position kind does not match {0} modality")]
    PositionModality(Modality),
    #[error("non-finite feature value")]
    NonFinite,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
