//! Simulator for sign-bit-flip fault attacks on the last dense layer of a
//! transfer-learned network.
//!
//! The victim is modeled as a frozen, publicly known feature extractor
//! followed by a secret dense layer and softmax. The attacker runs the
//! victim on chosen inputs, flips the sign bit of one intermediate value
//! per run, and inverts the observed clean/faulty softmax pair in closed
//! form to recover the secret weights and biases exactly (up to binary64
//! rounding).
//!
//! Module map:
//! - [`float`]: bit-exact binary64 utilities (bit flips, stable softmax)
//! - [`model`]: feature extractor + student layer, instrumented forward pass
//! - [`fault`]: fault specifications over the six injection points, session log
//! - [`extract`]: closed-form recovery and full last-layer extraction
//! - [`eval`]: precision summaries, rounding sweeps, temporal redundancy

pub mod error;
pub mod eval;
pub mod extract;
pub mod fault;
pub mod float;
pub mod format;
pub mod model;
pub mod rng;

pub use error::Error;
pub use extract::{ExtractionConfig, ObservationPair, RecoveryReport};
pub use fault::{FaultKind, FaultSession, FaultSpec, FaultTarget};
pub use float::{softmax, FloatWord, LogitVector, ProbabilityVector};
pub use model::{
    Activation, DenseLayer, FeatureExtractor, FeatureVector, PrecisionMode, RunInput,
    StudentLayer, StudentModel,
};

pub type Result<T> = std::result::Result<T, Error>;
