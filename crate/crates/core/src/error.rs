use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad cutoff, parameter ranges, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operator was applied outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Harmonic data supplied with the wrong dimension for the manifold.
    #[error("dimension error: expected {expected} harmonic coefficients, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A field or tensor was built against a different spectrum table.
    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("numerical blow-up at step {step} (t = {t}): {reason}")]
    BlowUp { step: u64, t: f64, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cache format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
