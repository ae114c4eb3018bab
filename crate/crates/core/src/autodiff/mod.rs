//! Dense `f64` tensors, a recorded forward trace, and exact reverse-mode
//! gradients for the operations the model needs.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, Evaluation, FdConfig, FdReport, TensorReport};
pub use graph::{Gradients, Graph, ParamGrad, ParamId, ParamSet, Var};
pub use tensor::{dot, norm, softmax_in_place, Tensor};
