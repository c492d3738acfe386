//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_with, Coverage, GradCheckReport, REL_ERROR_FLOOR};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{conv_output_len, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
