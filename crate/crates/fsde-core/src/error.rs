use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to act on: required
/// grid steps, blow-up times, tail estimates.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("paths live on different grids: {0}")]
    GridMismatch(String),

    #[error("fast grid too coarse for stiffness 1/epsilon: dt = {dt}, required dt <= {required}")]
    Stiffness { dt: f64, required: f64 },

    #[error("integration blew up at t = {time}: |state| = {magnitude:.3e} exceeded the guard {guard:.3e}")]
    BlowUp {
        time: f64,
        magnitude: f64,
        guard: f64,
    },

    #[error(
        "past truncation too shallow for tolerance {tolerance:.3e}: tail bound {tail_bound:.3e} at depth {depth}"
    )]
    TruncationDepth {
        depth: f64,
        tail_bound: f64,
        tolerance: f64,
    },

    #[error("seminorm undefined: {0}")]
    SeminormUndefined(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("diagnostic failure: {0}")]
    Diagnostic(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
