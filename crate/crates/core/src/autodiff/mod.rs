//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Just enough for a small 1D residual CNN: same-padded `conv1d`, `relu`,
//! residual `add`, `dense`, global average pooling and softmax
//! cross-entropy. Gradients are available for every leaf, including the
//! model input, which is what the shortcut scores are built from.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    finite_difference_check, finite_difference_check_with, relative_error, GradCheckConfig,
    GradCheckReport, DEFAULT_REL_FLOOR,
};
pub use tape::{BackwardFault, Gradients, NodeId, Reduction, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Class { label: usize, classes: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}
