//! Dense tensors and a reverse-mode differentiation tape.

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{Gradients, Graph, Reduce, Unary, Var, NORM_EPS};
pub use tensor::Tensor;
