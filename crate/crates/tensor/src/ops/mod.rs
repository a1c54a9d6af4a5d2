//! Differentiable operations. Every function records its backward rule
//! when grad mode is on and at least one input requires grad.

mod conv;
mod elementwise;
mod linear;
mod norm;
mod pool;

pub use conv::{conv2d, conv3d};
pub use elementwise::{add, concat, ln_clamped, mean, mul, relu, reshape, scale, softmax, sub, sum, weighted_sum};
pub use linear::linear;
pub use norm::batch_norm;
pub use pool::{avg_pool, global_avg_pool, global_max_pool, max_pool};
