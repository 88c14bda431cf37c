//! Minimal reverse-mode automatic differentiation over dense NCHW tensors.

mod element;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use element::{matmul, Element};
pub use gradcheck::{grad_check, ScalarFunction};
pub use tape::{Activation, Gradients, Mode, RunningStats, Tape, Var, PROB_EPS};
pub use tensor::Tensor;
