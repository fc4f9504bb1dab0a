use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("drift matrix is not Hurwitz stable (max Re λ = {max_real:e})")]
    UnstableSystem { max_real: f64 },

    #[error("linear solve is numerically singular: {0}")]
    SingularSolve(String),

    #[error("M + iνI is singular at ν = {nu} (condition number {cond:e})")]
    SingularFrequency { nu: f64, cond: f64 },

    #[error("Hurwitz determinant vanishes (|L| = {magnitude:e}); poles are marginally stable")]
    DegenerateDenominator { magnitude: f64 },

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    #[error("outside the formula's regime: {0}")]
    InvalidRegime(String),

    #[error("time step {dt} exceeds the stability bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("insufficient grid: {0}")]
    InsufficientGrid(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
