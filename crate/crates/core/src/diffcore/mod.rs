//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is rebuilt for every batch. Trainable tensors live in a
//! [`ParamSet`]; the graph copies them in as leaves, and after
//! [`Graph::backward`] the leaf gradients are summed back into the set with
//! [`Graph::accumulate_param_grads`]. [`AdamState`] then applies the update.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod sparse;
mod tensor;

pub use adam::AdamState;
pub use graph::{Graph, SparseOperator, Var};
pub(crate) use graph::{sigmoid, softplus};
pub use params::{ParamId, ParamSet};
pub use sparse::CsrMatrix;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("non-finite value produced or supplied in {op}")]
    NonFinite { op: &'static str },
    #[error("unsupported tensor rank {rank}")]
    BadRank { rank: usize },
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter {name} has no gradient")]
    MissingGrad { name: String },
    #[error("index {index} out of range for {len} rows in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("optimizer tracks {expected} parameters, got {found}")]
    OptimizerMismatch { expected: usize, found: usize },
}
