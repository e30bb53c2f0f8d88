use thiserror::Error;

/// Errors raised by the simulation and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("master equation truncated too early: p(n_max={n_max}) = {boundary_mass:e}")]
    Truncation { n_max: usize, boundary_mass: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("detection quality too low: {0}")]
    DetectionQuality(String),

    #[error("degenerate fit design: {0}")]
    DegenerateDesign(String),

    #[error("fit did not converge after {iterations} iterations (chi2 = {chi2})")]
    NoConvergence { iterations: usize, chi2: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Rejects NaN as well as values failing the predicate.
pub(crate) fn ensure(name: &'static str, value: f64, ok: bool, what: &str) -> Result<()> {
    if ok && !value.is_nan() {
        Ok(())
    } else {
        Err(invalid(name, format!("{what}, got {value}")))
    }
}
