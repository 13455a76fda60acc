//! Dense tensors, computation graphs and reverse-mode differentiation,
//! including the second-order pass needed by the gradient penalty, plus
//! Adam and the step-decay schedule.

mod eval;
mod graph;
mod linalg;
mod optim;
mod tangent;
mod tensor;

pub use eval::{backprop_params, backward, forward, Activations, Adjoints};
pub use graph::{Activation, Graph, Node, NodeId, Op, UnaryFn};
pub use optim::{adam_step, lr_schedule, AdamConfig, Gradients, ParamSet};
pub use tangent::{
    input_gradient, penalty_param_gradient, tangent_graph, GradientPenalty, PenaltyGradient, TangentGraph, NORM_EPS,
};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing {0}")]
    Missing(String),
    #[error("numeric fault: non-finite value at node {node} ({op})")]
    NumericFault { node: usize, op: String },
    #[error("loss must be a single scalar: {0}")]
    NonScalarLoss(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
