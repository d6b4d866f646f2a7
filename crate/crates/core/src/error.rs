//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parameter out of range: {0}")]
    Range(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("ODE step size underflow at t = {t} (x = {x:?}, y = {y})")]
    StepUnderflow { t: f64, x: Vec<f64>, y: f64 },
    #[error("flow inversion failed: {0}")]
    Inversion(String),
    #[error("Picard iteration did not converge at step {step} (residual {residual:e})")]
    Picard { step: usize, residual: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("CFL condition violated: {0}")]
    Cfl(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by a numerical breakdown.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Range(_) | Error::GridMismatch(_) | Error::Expr(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
