use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {x} lies outside the interval ({lo}, {hi})")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("value {y} lies outside the range ({lo}, {hi}) of the scale function")]
    Range { y: f64, lo: f64, hi: f64 },

    #[error("bisection did not reach tolerance {tol} in {iterations} iterations (residual {residual})")]
    NonConvergence {
        tol: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("numeric test inconclusive: {0}")]
    InconclusiveNumeric(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("integrability check failed: {0}")]
    Integrability(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("report failure: {0}")]
    ReportFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
