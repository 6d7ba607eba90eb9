//! Compact binary CNN graph format (`.rglm`): graph types, validation with
//! shape inference, a canonical codec and a programmatic builder.

mod builder;
mod codec;
mod graph;

use thiserror::Error;

pub use builder::GraphBuilder;
pub use codec::{parse_model, rom_size, serialize_model, HEADER_SIZE};
pub(crate) use graph::{conv_out_extent, pad_before};
pub use graph::{
    infer_output_shape, validate, Activation, ConvAttrs, Layer, ModelGraph, Op, OpKind, Padding, PoolAttrs, TensorDecl,
    TensorId, MAX_ELEMENTS, MAX_EXTENT, MAX_RANK,
};

pub const MAGIC: [u8; 4] = *b"RGLM";
pub const FORMAT_VERSION: u32 = 1;

/// Structural problems in an in-memory graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("reference to undeclared tensor {id}{}", layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    DanglingTensor { id: u32, layer: Option<usize> },
    #[error("layer dependency cycle through layer {layer}")]
    Cycle { layer: usize },
    #[error("layer {layer}: {message}")]
    ShapeMismatch { layer: usize, message: String },
    #[error("layer {layer}: {kind} cannot take {count} inputs")]
    Arity { layer: usize, kind: OpKind, count: usize },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("tensor {id}: {reason}")]
    InvalidTensor { id: u32, reason: String },
    #[error("tensor {id} is produced more than once (layer {layer})")]
    MultipleProducers { id: u32, layer: usize },
    #[error("tensor {id} is neither an input, a constant, nor produced by a layer")]
    NoProducer { id: u32 },
}

/// Errors from [`parse_model`]; every variant names the byte offset where
/// the problem was detected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported format version {version} at byte {offset}")]
    UnsupportedVersion { version: u32, offset: usize },
    #[error("truncated payload: needed {needed} bytes at byte {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("dangling reference to tensor {id} at byte {offset}")]
    DanglingReference { id: u32, offset: usize },
    #[error("cyclic graph detected at byte {offset}")]
    Cycle { offset: usize },
    #[error("shape mismatch at byte {offset}: {message}")]
    ShapeMismatch { offset: usize, message: String },
    #[error("unknown attribute key {key} at byte {offset}")]
    UnknownAttribute { key: u8, offset: usize },
    #[error("malformed record at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unexpected trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize },
    #[error("invalid graph at byte {offset}: {source}")]
    Invalid { offset: usize, source: GraphError },
}

impl FormatError {
    pub fn offset(&self) -> usize {
        match self {
            FormatError::BadMagic { offset }
            | FormatError::UnsupportedVersion { offset, .. }
            | FormatError::Truncated { offset, .. }
            | FormatError::DanglingReference { offset, .. }
            | FormatError::Cycle { offset }
            | FormatError::ShapeMismatch { offset, .. }
            | FormatError::UnknownAttribute { offset, .. }
            | FormatError::Malformed { offset, .. }
            | FormatError::TrailingBytes { offset }
            | FormatError::Invalid { offset, .. } => *offset,
        }
    }
}
