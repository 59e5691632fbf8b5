//! Dense tensors, reverse-mode autodiff, MLPs and Adam.

mod adam;
pub mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{huber, Gradients, Graph, Var};
pub use mlp::{Bound, Dense, Mlp, Parameters};
pub use tensor::Tensor;
