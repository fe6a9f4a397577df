use std::fmt;
use std::io;

use crate::autodiff::AutodiffError;

#[derive(Debug)]
pub enum Error {
    Autodiff(AutodiffError),
    /// A network, field, or constraint was built with inconsistent widths.
    Shape(String),
    NetworkIndex {
        index: usize,
        count: usize,
    },
    /// `|1 - a1 a2|` fell below the pendulum singularity threshold.
    SingularPendulum {
        denominator: f64,
    },
    /// A field produced a non-finite derivative during a Runge-Kutta stage.
    NonFiniteField {
        stage: usize,
    },
    StepSizeUnderflow {
        t: f64,
        h: f64,
    },
    InvalidArgument(String),
    NonFiniteLoss {
        step: usize,
    },
    Io {
        path: String,
        source: io::Error,
    },
    Parse {
        path: String,
        message: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Autodiff(e) => write!(f, "{e}"),
            Self::Shape(msg) => write!(f, "shape error: {msg}"),
            Self::NetworkIndex { index, count } => {
                write!(f, "network index {index} out of range ({count} networks)")
            }
            Self::SingularPendulum { denominator } => {
                write!(
                    f,
                    "singular pendulum mass matrix: 1 - a1*a2 = {denominator:e}"
                )
            }
            Self::NonFiniteField { stage } => {
                write!(
                    f,
                    "vector field returned a non-finite value at RK stage {stage}"
                )
            }
            Self::StepSizeUnderflow { t, h } => {
                write!(f, "step size {h:e} underflowed at t = {t}")
            }
            Self::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Self::NonFiniteLoss { step } => write!(f, "non-finite loss at step {step}"),
            Self::Io { path, source } => write!(f, "{path}: {source}"),
            Self::Parse { path, message } => write!(f, "failed to parse {path}: {message}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Autodiff(e) => Some(e),
            Self::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<AutodiffError> for Error {
    fn from(e: AutodiffError) -> Self {
        Self::Autodiff(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
