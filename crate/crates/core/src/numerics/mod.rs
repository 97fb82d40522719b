//! Dense tensors, a reverse-mode tape, and a finite-difference gradient oracle.

mod gradcheck;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{
    check_scalar_fn, finite_difference, grad_check, GradCheckEntry, GradCheckReport, ScalarFn,
};
pub use real::{DType, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Added inside the root of every normalization unless stated otherwise.
pub const NORM_EPS: f64 = 1e-5;
