//! Error types shared across the engine.

use thiserror::Error;

/// Errors produced by the core engine.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("response count must be at least 2, got {0}")]
    ResponseCount(usize),

    #[error("preference matrix has {found} entries, expected {expected} for {n} responses")]
    MatrixShape {
        n: usize,
        expected: usize,
        found: usize,
    },

    #[error("KL divergence is infinite: q[{index}] = 0 while p[{index}] = {p}")]
    InfiniteDivergence { index: usize, p: f64 },

    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("policies cover different contexts: {0}")]
    ContextMismatch(String),

    #[error("entry {index} is {value} but full support is required (apply the floor first)")]
    ZeroSupport { index: usize, value: f64 },

    #[error("judge needs two distinct candidates, got response {0} twice")]
    IdenticalCandidates(usize),

    #[error(
        "judge mode or opponent construction needs an equilibrium policy but none was supplied"
    )]
    MissingExpert,

    #[error(
        "equilibrium solver stopped after {iterations} iterations with exploitability {exploitability:.3e} above tolerance {tol:.3e}"
    )]
    Convergence {
        iterations: usize,
        exploitability: f64,
        tol: f64,
        /// Best iterate seen before giving up.
        best: Vec<f64>,
    },

    #[error("support enumeration handles at most n = {max} responses, got {n}")]
    SupportEnumeration { n: usize, max: usize },

    #[error("support enumeration found no symmetric equilibrium (degenerate game)")]
    NoEquilibrium,

    #[error("horizon bound needs a constant learning-rate schedule, got {0}")]
    UnsupportedSchedule(String),

    #[error("trajectory has no records")]
    EmptyTrajectory,

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
}

impl CoreError {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        CoreError::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
