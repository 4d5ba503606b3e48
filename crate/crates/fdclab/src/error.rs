//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A kinematic singularity guard fired (cos θ, cos β, or V too small).
    /// Clamping instead of failing would silently corrupt generated data.
    #[error("singular state: {what} = {value:.3e}{}", time.map(|t| format!(" at t = {t:.3} s")).unwrap_or_default())]
    Singular {
        what: &'static str,
        value: f64,
        time: Option<f64>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    /// A fault event does not fit inside the trajectory it is applied to.
    #[error("fault event out of range: case {case} at [{onset:.2} s, {:.2} s] exceeds trajectory end {end:.2} s", onset + duration)]
    EventOutOfRange {
        case: u8,
        onset: f64,
        duration: f64,
        end: f64,
    },

    /// Requested SDI window is not covered by the trajectory.
    #[error("window [{start:.2} s, {end:.2} s] outside trajectory span [{have_start:.2} s, {have_end:.2} s]")]
    WindowOutOfRange {
        start: f64,
        end: f64,
        have_start: f64,
        have_end: f64,
    },

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        found: impl Into<String>,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            found: found.into(),
        }
    }
}
