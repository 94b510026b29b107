use alloc::string::String;
use core::fmt;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    Dimension {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    /// A precondition of an operation was violated.
    Contract(String),
    /// A loss or gradient became non-finite.
    Divergence { step: usize, detail: &'static str },
    /// A metric is undefined for the given inputs (e.g. an empty surface).
    UndefinedMetric(&'static str),
    /// Shape generation could not satisfy the family constraints.
    Generation { index: usize, attempts: usize },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => {
                write!(f, "dimension mismatch in {op}: {lhs} vs {rhs}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Divergence { step, detail } => {
                write!(f, "numerical divergence at step {step}: {detail}")
            }
            Error::UndefinedMetric(what) => write!(f, "undefined metric: {what}"),
            Error::Generation { index, attempts } => write!(
                f,
                "shape {index}: no admissible sample after {attempts} attempts"
            ),
        }
    }
}

impl core::error::Error for Error {}
