use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state at step {step} (t = {t}), particle {particle}: {quantity} = {value}")]
    NonFinite {
        step: usize,
        t: f64,
        particle: usize,
        quantity: &'static str,
        value: f64,
    },

    #[error("overflow while forming {quantity}: {hint}")]
    Overflow { quantity: &'static str, hint: String },

    #[error("Riccati solution escapes |gamma| > {threshold:e} at t = {escape_time}")]
    RiccatiBlowUp { escape_time: f64, threshold: f64 },

    #[error("particle filter degenerate at step {step}: effective sample size {ess:.3} < {min}")]
    Degeneracy { step: usize, ess: f64, min: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing input: {0}")]
    Missing(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
