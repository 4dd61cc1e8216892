//! Dense `f32` tensors, a define-by-run reverse-mode graph, and SGD with momentum.

mod fd;
mod graph;
mod optim;
mod tensor;

pub use fd::{finite_difference_grad, relative_error};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use optim::{param_group, sgd_step, OptimState};
pub use tensor::{ParamStore, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("zero-norm vector at row {row}")]
    ZeroNorm { row: usize },
    #[error("reduction over an empty tensor")]
    EmptyReduction,
    #[error("backward requested for a node that was never evaluated")]
    NotForwarded,
    #[error("unknown graph node {0}")]
    UnknownNode(usize),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
