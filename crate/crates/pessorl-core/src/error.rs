use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors surfaced by the core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Array shapes disagree with the MDP they are used against.
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// MDP or maze construction failed validation; every violation is listed.
    Invalid(Vec<String>),
    /// An operation that needs data was handed an empty dataset.
    EmptyDataset,
    /// A term of an objective evaluated to NaN or infinity.
    NonFinite { term: &'static str },
    /// Empirical closed-form update hit a zero state density; a `d_min`
    /// floor must be configured to proceed.
    DensityFloor { state: usize },
    /// Queried a quantity that is only defined on visited state-action pairs.
    OutOfSupport { state: usize, action: usize },
    /// The trainer's divergence guard tripped.
    Diverged { norm: f64, limit: f64 },
    /// Fixed-point iteration exhausted its cap without converging.
    NoConvergence { iterations: usize, residual: f64 },
    /// A variant-specific input (ensemble, counts, zeta) is missing.
    MissingInput(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected length {expected}, got {got}"),
            Error::Invalid(violations) => {
                write!(f, "validation failed:")?;
                for v in violations {
                    write!(f, " [{v}]")?;
                }
                Ok(())
            }
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::NonFinite { term } => write!(f, "non-finite value in term `{term}`"),
            Error::DensityFloor { state } => write!(
                f,
                "empirical state density is zero at state {state}; set d_min > 0"
            ),
            Error::OutOfSupport { state, action } => write!(
                f,
                "state-action pair ({state}, {action}) has no visits in the dataset"
            ),
            Error::Diverged { norm, limit } => {
                write!(f, "Q-table sup-norm {norm} exceeded divergence guard {limit}")
            }
            Error::NoConvergence {
                iterations,
                residual,
            } => write!(
                f,
                "no convergence after {iterations} iterations (residual {residual})"
            ),
            Error::MissingInput(what) => write!(f, "missing input for variant: {what}"),
        }
    }
}

impl core::error::Error for Error {}
