//! Dense `f64` tensors, tape-based reverse-mode gradients, finite-difference
//! verification and the SGD update.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::sgd_step;
pub use tensor::Tensor;
