//! Minimal reverse-mode automatic differentiation over `f64` tensors.

mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod optim;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{
    check_gradients, check_stack, random_stack_case, relative_error, single_layer_cases,
    GradcheckConfig, GradcheckResult,
};
pub use graph::{Fault, Gradients, Graph, Var};
pub use kernels::{masked_log_softmax_rows, masked_softmax_rows};
pub use layers::{forward_layers, orthogonal, Layer, LayerSpec, Network};
pub use optim::{clip_grad_norm, Adam, StepSchedule};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a single element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("every action is masked")]
    AllMasked,
}
