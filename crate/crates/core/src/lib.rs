// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod constraints;
pub mod dataset;
pub mod error;
pub mod nn;
pub mod odeint;
pub mod pendulum;
pub mod trainer;
pub mod vectorfield;

pub use error::{Error, Result};
