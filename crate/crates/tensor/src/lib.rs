//! Dense f32 tensors with reverse-mode automatic differentiation and the
//! CPU kernels needed to train small convolutional networks: grouped 2D/3D
//! convolution, batch normalization, pooling, fully connected layers and
//! softmax.
//!
//! Reductions accumulate in f64. Kernels fan out over images or channel
//! planes with rayon when the `parallel` feature is enabled; every worker
//! owns a disjoint slice of the output, so results do not depend on the
//! thread count.

mod error;
pub mod ops;
pub mod optim;
pub mod par;
mod tensor;

pub use error::{Result, TensorError};
pub use tensor::{grad_enabled, no_grad, numel, Tensor};
