//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built fresh for every batch: each builder method evaluates
//! its op immediately and records it on the tape. [`Graph::backward`] walks
//! the tape in reverse, and [`ParameterStore`] owns the trainable tensors
//! together with their Adam moments.

mod adam;
mod checkpoint;
mod graph;
mod store;
mod tensor;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Axis, CustomOp, Gradients, Graph, NodeId};
pub use store::{ParamEntry, ParameterStore};
pub use tensor::Tensor;


#[derive(Debug, Error)]
pub enum NumericError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch at {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("non-finite value produced at {node}")]
    NonFinite { node: String },
    #[error("loss must be scalar, but {node} has shape {shape:?}")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("invalid optimizer setting: {0}")]
    InvalidOptimizer(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
