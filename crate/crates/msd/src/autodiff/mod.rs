//! Dense tensors with reverse-mode differentiation whose backward pass is
//! itself differentiable, which is what the second-order meta-gradients need.
//!
//! The pieces: [`Tensor`] values, the append-only [`Graph`] tape, the
//! operator set in [`ops`], the sweep in [`backward`], named parameter
//! collections in [`params`], and the finite-difference oracle in
//! [`finite_diff`].

pub mod backward;
pub mod finite_diff;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use backward::{backward, grad_tensors};
pub use finite_diff::{finite_diff_gradient, max_relative_error};
pub use graph::Graph;
pub use params::{ParamSet, CHECKPOINT_MAGIC};
pub use tensor::Tensor;
