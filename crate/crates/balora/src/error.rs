//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on shapes, ranges, or finiteness was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The matrix handed to the inverse square root is numerically singular;
    /// carries the offending eigenvalue.
    #[error("near-singular matrix: min eigenvalue {eigenvalue:e} below threshold {threshold:e}")]
    NearSingular { eigenvalue: f64, threshold: f64 },

    /// A factor that must have full column rank does not.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// A point claimed to lie on the manifold has drifted beyond repair.
    #[error("infeasible point: {0}")]
    InfeasiblePoint(String),

    /// Requested manifold dimensions admit no feasible point.
    #[error("infeasible dimensions: r={r} + k={k} exceeds d={d}")]
    InfeasibleDimensions { d: usize, r: usize, k: usize },

    /// The gradient memory cannot grow past the ambient dimension.
    #[error("memory capacity exhausted: k={k} + r_t={appended} would exceed d={d}")]
    CapacityExhausted { d: usize, k: usize, appended: usize },

    /// NAI denominator (individual minus zero-shot accuracy) is numerically zero.
    #[error("degenerate baseline: |individual - zero-shot| = {denominator:e} below 1e-9")]
    DegenerateBaseline { denominator: f64 },

    /// Experiment configuration is missing or inconsistent.
    #[error("config error: {0}")]
    ConfigError(String),

    /// A stored artifact could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parsable class name, used by the CLI for one-line errors.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::NearSingular { .. } => "NearSingular",
            Error::RankDeficient(_) => "RankDeficient",
            Error::InfeasiblePoint(_) => "InfeasiblePoint",
            Error::InfeasibleDimensions { .. } => "InfeasibleDimensions",
            Error::CapacityExhausted { .. } => "CapacityExhausted",
            Error::DegenerateBaseline { .. } => "DegenerateBaseline",
            Error::ConfigError(_) => "ConfigError",
            Error::ParseError { .. } => "ParseError",
            Error::Io(_) => "Io",
        }
    }
}
