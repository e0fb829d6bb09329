//! Minimal reverse-mode differentiable tensor engine: NCHW convolution,
//! attention building blocks, pooling, resampling, a finite-difference
//! gradient oracle, and a raw binary container for tensors and checkpoints.

pub mod container;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{Graph, Var};
pub use scalar::{gemm, Scalar};
pub use tensor::{numel, Tensor};
