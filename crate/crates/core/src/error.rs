use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("grid does not cover the required span: {0}")]
    Coverage(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("integration failed at t = {t} ps: {reason}")]
    Integration { t: f64, reason: String },
    #[error("parametric threshold exceeded at t = {t} ps")]
    ThresholdExceeded { t: f64 },
    #[error("fock truncation: top-level population {population:.3e} at cutoff {cutoff}, raise the cutoff")]
    Truncation { cutoff: usize, population: f64 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("maximum at edge of search range [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },
    #[error("matrix size {n} exceeds the permanent cap {cap}")]
    Size { n: usize, cap: usize },
    #[error("g2 undefined: all squeezing parameters vanish")]
    UndefinedG2,
    #[error("fidelity undefined for zero-norm input")]
    UndefinedFidelity,
    #[error("no multi-pair contribution: correction denominator vanishes")]
    NoMultipair,
    #[error("six-fold system ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
