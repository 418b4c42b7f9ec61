//! Dense float64 tensors and a tape-based reverse-mode differentiator.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{Tape, Var, LOG_EPS};
pub use tensor::{numel, Tensor, TensorError};
