//! Dense arrays, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod array;
mod gradcheck;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::{Array, Scalar};
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};
