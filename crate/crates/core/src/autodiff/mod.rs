//! Dense reverse-mode automatic differentiation over `f64` tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use tape::{Tape, Var, CLAMP_EPS};
pub use tensor::Tensor;

