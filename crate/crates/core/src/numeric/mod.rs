//! Dense 64-bit tensors, a reverse-mode tape, AdamW, and a finite-difference
//! gradient checker.

mod adamw;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use gradcheck::{grad_check, Coordinates, GradCheckReport};
pub use tape::{BackwardRule, Gradients, ParamId, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
