//! Forward kernels as pure functions over [`Tensor`](super::Tensor)s.
//!
//! The tape records these same kernels, so the functions here double as the
//! reference implementation for the differentiable versions.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pointwise;
pub(crate) mod pool;
pub(crate) mod reduce;

pub use conv::{conv2d, Conv2dOptions};
pub use elementwise::{binary, Binary};
pub use linalg::{linear, matmul};
pub use loss::{cross_entropy, relative_bias};
pub use norm::{layer_norm, softmax};
pub use pointwise::{pointwise_map, Unary};
pub use pool::{pool2d, PoolKind, PoolWindow};
pub use reduce::{concat, reduce, Reduce};
