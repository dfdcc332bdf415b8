use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid argument to an operation (unknown example id, reversed
    /// interval, bad exponent, ...).
    Parameter(String),
    /// Inconsistent configuration (tick overflow, step not representable on
    /// the grid, missing drift Jacobian for an implicit solver, ...).
    Config(String),
    /// A coefficient callback returned a non-finite value at `point`
    /// (the concatenated `(x, y)` arguments).
    Evaluation { what: &'static str, point: Vec<f64> },
    /// The adaptive step function returned a non-positive or non-finite step.
    Policy(String),
    /// A solver state became non-finite; carries the step index and the step
    /// start time in ticks.
    Overflow { step_index: u64, t_ticks: u64 },
    /// Newton iteration for an implicit step did not converge.
    Newton { iterations: u32, residual: f64 },
    /// The reference path of an experiment diverged; experiments cannot
    /// produce errors without it.
    ReferenceDiverged {
        path_index: u64,
        step_index: u64,
        t_ticks: u64,
    },
    /// Too few data points for a fit.
    InsufficientData(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parameter(msg) => write!(f, "parameter error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Evaluation { what, point } => {
                write!(f, "evaluation error: {what} non-finite at {point:?}")
            }
            Error::Policy(msg) => write!(f, "step policy error: {msg}"),
            Error::Overflow { step_index, t_ticks } => write!(
                f,
                "overflow: state non-finite at step {step_index} (t = {t_ticks} ticks)"
            ),
            Error::Newton { iterations, residual } => write!(
                f,
                "newton iteration failed to converge after {iterations} iterations \
                 (residual {residual:e})"
            ),
            Error::ReferenceDiverged {
                path_index,
                step_index,
                t_ticks,
            } => write!(
                f,
                "reference path {path_index} diverged at step {step_index} \
                 (t = {t_ticks} ticks)"
            ),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
