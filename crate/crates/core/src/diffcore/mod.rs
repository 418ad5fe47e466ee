//! Reverse-mode automatic differentiation over small dense `f64` tensors,
//! with an Adam optimizer and a finite-difference gradient checker.

mod adam;
pub mod gradcheck;
mod graph;
mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheck};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::{sigmoid, softplus, CustomOp, Op};
pub use params::{ParamId, ParamNodes, ParamStore};
pub use tensor::Tensor;
