//! Reverse-mode automatic differentiation over dense CPU tensors.
//!
//! Every backward rule is expressed with differentiable tensor ops, so
//! gradients can be differentiated again (needed for gradient penalties).

mod backward;
mod element;
pub mod gradcheck;
mod ops;
pub mod shape;
mod tensor;

pub use backward::{grad, Gradients};
pub use element::{gemm, Element};
pub use ops::linalg::{conv2d_input_grad, conv2d_weight_grad, ConvGeometry};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
