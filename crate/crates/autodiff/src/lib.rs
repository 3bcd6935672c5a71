//! A small define-by-run reverse-mode differentiation engine over dense,
//! row-major tensors.
//!
//! Every forward pass records its operations on a fresh [`Graph`]; calling
//! [`Graph::backward`] on a scalar node accumulates gradients into every
//! node that requires them. The engine is generic over the floating-point
//! scalar ([`Scalar`]); `f64` is the default for gradient checking.

mod error;
mod gradcheck;
mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{check_gradients, check_gradients_with, GradCheckOptions, GradientReport};
pub use graph::{Graph, Var, MASK_FILL};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Double-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Double-precision graph.
pub type Graph64 = Graph<f64>;
/// Single-precision graph.
pub type Graph32 = Graph<f32>;
