//! Tensors, reverse-mode differentiation, Adam, and finite-difference checks.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, gradient_check_reference, relative_error, LossBuilder, GradCheckReport, GroupError, DEFAULT_PERTURBATION};
pub use graph::{Graph, NodeId};
pub use params::{init_uniform, Gradients, ParamGroup, ParamId, ParamStore};
pub use tensor::{softmax, Scalar, Tensor};
