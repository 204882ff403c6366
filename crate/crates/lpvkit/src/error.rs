//! Crate-wide error type.
//!
//! Variants are grouped by the subsystem that raises them; the CLI maps each
//! group to a distinct process exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector did not have the shape required by an operation.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Benchmark name not recognised by the model factory.
    #[error("unknown benchmark '{0}'")]
    UnknownBenchmark(String),

    /// Steady-state solve did not converge.
    #[error("equilibrium solve failed: {0}")]
    Equilibrium(String),

    /// Time integration aborted; `time` is the last state the integrator
    /// could still certify.
    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    /// Requested reduced orders are inconsistent (needs `r <= k`).
    #[error("parameter order r = {r} exceeds reduction order k = {k}")]
    ParameterOrder { r: usize, k: usize },

    /// Vertex enumeration would need 2^r vertices; refused above the cap.
    #[error("parameter dimension {0} too large for vertex enumeration")]
    DimensionTooLarge(usize),

    /// Polytope optimization could not produce a usable candidate.
    #[error("polytope optimization failed: {0}")]
    OptimizationFailed(String),

    /// A scheduling parameter fell outside the polytope; `violation` is the
    /// infinity-norm reconstruction defect of the best membership attempt.
    #[error("parameter outside scheduling domain (violation {violation:.3e})")]
    OutsideDomain { violation: f64 },

    /// Problem exceeds the documented size cap of the SDP solver.
    #[error("SDP problem exceeds solver cap: {0}")]
    SdpCap(String),

    /// Barrier solver ran out of iterations without a certified verdict.
    #[error("SDP solver hit the iteration limit: {0}")]
    IterationLimit(String),

    /// A factorization failed or non-finite numbers appeared.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// No gamma level in the search bracket admits a controller.
    #[error("synthesis infeasible up to gamma = {gamma:.3e}")]
    SynthesisInfeasible { gamma: f64 },

    /// Synthesis weights must be positive (or zero where documented).
    #[error("invalid synthesis weight: {0}")]
    WeightError(String),

    /// Closed-loop run left the scheduling polytope under the hard-error
    /// policy. Partial results up to `time` were recorded by the caller.
    #[error("scheduling parameter exited the polytope at t = {time} (violation {magnitude:.3e})")]
    ParameterExit { time: f64, magnitude: f64 },

    /// Requested output channel does not exist.
    #[error("output index {index} out of range (q = {q})")]
    IndexError { index: usize, q: usize },

    /// Text artifact could not be parsed.
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// A pipeline stage was requested without its input artifacts.
    #[error("stage dependency unsatisfied: {0}")]
    StageDependency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable coarse classification, used for process exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension { .. }
            | Error::UnknownBenchmark(_)
            | Error::Equilibrium(_)
            | Error::ParameterOrder { .. }
            | Error::IndexError { .. }
            | Error::WeightError(_) => ErrorClass::Model,
            Error::Integration { .. } => ErrorClass::Integration,
            Error::DimensionTooLarge(_)
            | Error::OptimizationFailed(_)
            | Error::OutsideDomain { .. } => ErrorClass::Polytope,
            Error::SdpCap(_)
            | Error::IterationLimit(_)
            | Error::NumericalBreakdown(_)
            | Error::SynthesisInfeasible { .. } => ErrorClass::Synthesis,
            Error::ParameterExit { .. } => ErrorClass::ParameterExit,
            Error::Parse { .. } | Error::Io(_) => ErrorClass::Artifact,
            Error::StageDependency(_) => ErrorClass::Stage,
        }
    }
}

/// Coarse error classes with stable CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Model,
    Integration,
    Polytope,
    Synthesis,
    ParameterExit,
    Artifact,
    Stage,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Model => 2,
            ErrorClass::Integration => 3,
            ErrorClass::Polytope => 4,
            ErrorClass::Synthesis => 5,
            ErrorClass::ParameterExit => 6,
            ErrorClass::Artifact => 7,
            ErrorClass::Stage => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Model => "model",
            ErrorClass::Integration => "integration",
            ErrorClass::Polytope => "polytope",
            ErrorClass::Synthesis => "synthesis",
            ErrorClass::ParameterExit => "parameter-exit",
            ErrorClass::Artifact => "artifact",
            ErrorClass::Stage => "stage",
        }
    }
}
