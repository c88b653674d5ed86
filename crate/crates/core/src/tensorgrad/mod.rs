//! Dense tensors with define-by-run reverse-mode differentiation.

pub mod container;
pub mod gradcheck;
pub mod graph;
mod ops;
pub mod tensor;

pub use container::{read_container, write_container, Entry};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{BackwardArgs, Graph, Var};
pub use ops::elementwise::{sigmoid, softplus, softplus_inv};
pub use tensor::Tensor;
