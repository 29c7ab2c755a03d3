use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The trajectory reached `|sin β| <= guard`; the body is leaving the trap.
    #[error("coordinate singularity: |sin(beta)| = {sin_beta:.3e} at t = {t:.6e} s")]
    SingularityGuard { t: f64, sin_beta: f64 },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("step size underflow: required dt = {dt:.3e} s < dt_min at t = {t:.6e} s")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("step budget exhausted after {0} steps")]
    MaxStepsExceeded(usize),

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("parameter ordering violated: {0}")]
    ParameterOrderViolation(String),

    #[error("rejection sampler exhausted {0} proposals")]
    RejectionCapExceeded(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("found {found} peaks above the floor, {wanted} requested")]
    PeaksNotFound { wanted: usize, found: usize },

    #[error("experiment failed: {failed} of {total} trajectories failed")]
    ExperimentFailed { failed: usize, total: usize },

    #[error("parse error at {location}: {message}")]
    ParseError { location: String, message: String },

    #[error("invalid value for `{key}`: {message}")]
    ValidationError { key: String, message: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ValidationError {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Errors in the user's configuration rather than in the run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ParseError { .. }
                | Error::ValidationError { .. }
                | Error::UnknownScenario(_)
                | Error::InvalidMaterial(_)
                | Error::ParameterOrderViolation(_)
        )
    }

    /// Errors that mean the particle left the trapping region rather than
    /// that the numerics broke down.
    pub fn is_escape(&self) -> bool {
        matches!(self, Error::SingularityGuard { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
