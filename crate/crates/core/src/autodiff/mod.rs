//! Reverse-mode automatic differentiation with the layers the detector network needs.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod tensor;

pub use adam::AdamState;
pub use graph::{sigmoid, BatchStats, Graph, Var};
pub use tensor::Tensor;
