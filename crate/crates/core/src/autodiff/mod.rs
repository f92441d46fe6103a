//! Reverse-mode automatic differentiation over real arrays.
//!
//! Quaternion values live on the tape in their real form: an `n × 4d`
//! matrix whose column blocks are the `r`, `x`, `y` and `z` components.
//! Quaternion operations are recorded as real operations on that layout,
//! so gradients are ordinary real gradients of a real-valued loss.

pub mod gradcheck;
mod kernels;
mod tape;

pub use kernels::AttentionMask;
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
