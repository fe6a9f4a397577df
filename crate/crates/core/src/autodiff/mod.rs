//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] walks the record
//! in reverse and accumulates adjoints. Tapes are rebuilt for every training
//! step.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{gradient_check, GradientCheck};
pub use matrix::Matrix;
pub use tape::{AutodiffError, Gradients, Tape, Var};
