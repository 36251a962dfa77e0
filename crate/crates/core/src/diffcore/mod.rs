//! Differentiable building blocks: dense networks with batched backprop, a
//! scalar reverse-mode tape, Adam, and a finite-difference gradient checker.
//!
//! All arithmetic is `f64`.

mod adam;
mod check;
mod net;
mod tape;

pub use adam::{adam_step, AdamState};
pub use check::{central_differences, finite_diff_check, gradient, Differentiable, TapeFn};
pub use net::{Activation, BatchTrace, DenseNet, NetSnapshot};
pub use tape::{Tape, Var};
