//! Dense matrices, reverse-mode differentiation and seeded randomness.

pub mod gradcheck;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use matrix::Matrix;
pub use rng::RngStream;
pub use tape::{Gradients, NodeId, OpKind, Tape};
