//! Dense tensor operations with reverse-mode differentiation.
//!
//! Forward operations are recorded on a [`Tape`]; [`Tape::backward`] replays
//! them in reverse to produce gradients for every leaf created with
//! `requires_grad`. Convolution is cross-correlation (no kernel flip) with
//! zero padding, and transposed convolution is its exact adjoint.

mod conv;
pub mod gradcheck;
mod norm;
pub mod reference;
mod tape;

pub use conv::ConvConfig;
pub use gradcheck::{
    finite_diff_check, Differentiable, GradCheckConfig, GradCheckReport, ScaledGradient, TapeFn,
};
pub use norm::BatchStats;
pub use tape::{Gradients, Tape, Var};
