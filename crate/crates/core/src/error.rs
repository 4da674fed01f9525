use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::hyperselect::BilevelTrace;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone)]
pub enum Error {
    /// An argument falls outside the domain of a function (grid, interpolation table, log of a nonpositive value).
    Domain(String),
    /// A configuration violates its invariants.
    Config(String),
    /// The explicit FPE scheme produced a density below the negativity floor.
    Instability { step: usize, value: f64 },
    /// A vector or matrix has the wrong length or shape.
    Size {
        expected: usize,
        found: usize,
        what: &'static str,
    },
    /// Regression assembly failed (degenerate data).
    Assembly(String),
    /// GSVD or eigendecomposition failed.
    Decomposition(String),
    /// A matrix expected to be positive semi-definite has a clearly negative eigenvalue.
    NotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },
    /// A linear solve failed (singular system).
    Solve(String),
    /// The training/validation split is impossible.
    Split(String),
    /// An operation was called on an object in the wrong state.
    State(String),
    /// The bilevel iteration produced a non-finite loss or parameter.
    Divergence { trace: Box<BilevelTrace> },
    /// Relative error requested against a reference with zero norm.
    RelativeUndefined,
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Instability { step, value } => {
                write!(f, "scheme unstable at step {step}: density reached {value:e}")
            }
            Error::Size { expected, found, what } => {
                write!(f, "size mismatch for {what}: expected {expected}, found {found}")
            }
            Error::Assembly(msg) => write!(f, "assembly error: {msg}"),
            Error::Decomposition(msg) => write!(f, "decomposition error: {msg}"),
            Error::NotPsd { min_eigenvalue, max_eigenvalue } => write!(
                f,
                "matrix is not positive semi-definite: eigenvalue {min_eigenvalue:e} vs largest {max_eigenvalue:e}"
            ),
            Error::Solve(msg) => write!(f, "solve error: {msg}"),
            Error::Split(msg) => write!(f, "split error: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Divergence { trace } => write!(
                f,
                "bilevel iteration diverged after {} iterations",
                trace.records.len()
            ),
            Error::RelativeUndefined => {
                write!(f, "relative error undefined: reference has zero norm")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
