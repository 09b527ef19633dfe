//! Minimal reverse-mode autodiff and optimizer machinery for the toy-scale
//! training loop.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{finite_difference_check, finite_difference_check_smooth};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
