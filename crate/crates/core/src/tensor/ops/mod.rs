//! Differentiable primitives. Each file extends [`Tape`](super::Tape) with
//! forward computations and their backward rules.

mod activation;
mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod pool;
mod shape;

pub use activation::softmax_rows;
pub use norm::{BatchNormMode, BatchStats};
