use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spectrum: entry {index} is {value}, expected a positive value")]
    InvalidSpectrum { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("argument order: {0}")]
    ArgumentOrder(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("chain diverged at step {step}")]
    Divergence { step: usize },

    #[error("shift schedule is degenerate at t = {t} (continuous schedule is undefined at the horizon)")]
    ScheduleDegenerate { t: f64 },

    #[error("contraction certificate failed at t = {t}, lambda = {lambda}: lambda_min = {value} < bound = {bound}")]
    Certification {
        t: f64,
        lambda: f64,
        value: f64,
        bound: f64,
    },

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("epsilon = {eps} outside admissible range (0, {max}]")]
    Range { eps: f64, max: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("integration blew up at t = {t}")]
    Integration { t: f64 },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
