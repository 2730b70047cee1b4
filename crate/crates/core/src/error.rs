//! Crate-wide error type.

use std::fmt;

/// Everything that can go wrong in the simulator, one variant per failure
/// class so callers can match on the condition they care about.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Caller violated an API precondition (bad dimensions, bad arguments).
    Usage(String),
    /// A forward pass produced a NaN or infinity; faulted runs that overflow
    /// are observable garbage and are never silently propagated.
    NonFinite { context: String },
    /// Fault coordinates fall outside the model's (n, m) bounds.
    FaultOutOfBounds { target: String, n: usize, m: usize },
    /// More than one fault was requested for a single run.
    SessionDiscipline(String),
    /// An observed softmax output saturated to exactly 0.0 or 1.0 (or is too
    /// poorly conditioned to meet the requested precision); the caller must
    /// retry with a different input.
    DegenerateObservation { z: f64, z_tilde: f64 },
    /// Weight recovery was attempted with a zero feature value.
    VanishingInput { index: usize },
    /// The non-vanishing input search exhausted its try budget.
    SearchFailure { index: usize, tries: usize },
    /// A model file failed to parse or validate; `path` names the offending
    /// field, e.g. `student.weights[2][3]`.
    Format { path: String, message: String },
    /// A fault spec string failed to parse; names the offending token.
    FaultParse { token: String, position: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::NonFinite { context } => {
                write!(f, "non-finite value encountered in {context}")
            }
            Error::FaultOutOfBounds { target, n, m } => {
                write!(f, "fault target {target} out of bounds for n={n}, m={m}")
            }
            Error::SessionDiscipline(msg) => write!(f, "session discipline violated: {msg}"),
            Error::DegenerateObservation { z, z_tilde } => write!(
                f,
                "degenerate observation pair (z={z}, z_tilde={z_tilde}); retry with a different input"
            ),
            Error::VanishingInput { index } => {
                write!(f, "feature value at index {index} is zero; weight recovery needs a non-vanishing input")
            }
            Error::SearchFailure { index, tries } => write!(
                f,
                "no non-vanishing input found for feature index {index} after {tries} tries"
            ),
            Error::Format { path, message } => write!(f, "model format error at {path}: {message}"),
            Error::FaultParse { token, position, message } => write!(
                f,
                "fault spec parse error at position {position}, token {token:?}: {message}"
            ),
        }
    }
}

impl std::error::Error for Error {}
