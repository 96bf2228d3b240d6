//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records operations applied to [`Var`]s and replays them
//! backwards to produce gradients. Trainable tensors live in a
//! [`ParamStore`] and enter a graph through [`Graph::param`]; everything
//! else enters as a constant or a watched leaf.
//!
//! Shape errors inside individual operations are programming errors and
//! panic with a descriptive message, the same way `ndarray` arithmetic does.
//! Higher layers validate user-facing preconditions before building graphs.
//!
//! The heavy kernels (convolution, batched matmul, resize, pooling) split
//! work across rayon when the `parallel` feature is enabled and fall back to
//! plain loops otherwise. All reductions are performed in a fixed order so
//! results do not depend on the thread count.

pub mod check;
pub mod flops;
mod graph;
pub mod init;
mod ops;
pub mod par;
mod params;

pub use graph::{Gradients, Graph, Mode, Var};
pub use ops::conv::conv2d_forward;
pub use ops::norm::BatchNormStats;
pub use ops::resize::{resize_bilinear_plane, ResizeAxis};
pub use params::{ParamId, ParamKind, ParamStore};

/// Dense dynamic-rank array used for every value in the engine.
pub type Tensor = ndarray::ArrayD<f64>;

/// Builds a tensor from a shape and row-major data.
///
/// Panics if `data.len()` does not match the product of `shape`.
pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_shape_vec(ndarray::IxDyn(shape), data).expect("tensor: data length does not match shape")
}

/// Tensor filled with zeros.
pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(ndarray::IxDyn(shape))
}
