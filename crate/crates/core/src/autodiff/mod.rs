//! Minimal reverse-mode differentiation over image-shaped tensors.
//!
//! A [`Tape`] records primitive operations in insertion order; the backward
//! pass replays it in reverse. Only the operations needed by the reference
//! models and the attack losses exist: same-padded convolution, ReLU and
//! sigmoid, elementwise add/sub/mul, scaling, sum/mean/L2 reductions and the
//! fixed RGB → YUV map.
//!
//! Subgradient conventions: `relu'(0) = 0` and the gradient of `‖v‖₂` at
//! `v = 0` is zero.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use tape::{Activation, Elementwise, GradReport, Reduction, Region, Tape, Var};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod tests;
