//! Differentiable operations recorded on a [`Tape`](crate::tape::Tape).
//!
//! Sequence tensors are `[batch, time, channels]`, row-major, so one time
//! step's channel vector is contiguous.

mod attention;
mod basic;
mod dense;
mod norm;

pub use attention::{attention_pool_weights, attention_weights};
pub use basic::{gelu, gelu_grad, sigmoid};
pub use dense::reverse_time_array;
pub use norm::BatchStats;
