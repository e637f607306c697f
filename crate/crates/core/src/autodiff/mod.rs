//! Differentiable layer primitives and tape-based reverse mode.

pub mod gradcheck;
pub mod ops;
mod tape;

pub use gradcheck::{finite_difference_gradient, max_relative_error};
pub use tape::{Gradients, Tape, ValueId};
