use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrand declares no mark ceiling; its integral over the mark axis is improper")]
    MissingMarkCeiling,

    #[error("model violates its stability conditions: {0}")]
    ModelViolation(String),

    #[error("unstable kernel: norm {norm} >= 1")]
    Unstable { norm: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("mark ceiling {ceiling} exceeds the guard {limit} near t = {t}")]
    CeilingOverflow { ceiling: f64, limit: f64, t: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("intensity {value} at t = {t} is below the positivity floor")]
    NonPositiveIntensity { t: f64, value: f64 },

    #[error("normalization not admissible: {0}")]
    Inadmissible(String),

    #[error("completeness rescan failed: {0}")]
    Incomplete(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
