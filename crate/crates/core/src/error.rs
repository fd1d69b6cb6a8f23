use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants fall in two families: input problems (bad configuration text,
/// shapes, unknown names) and numerical failures. [`Error::is_numerical`]
/// tells them apart, which the command line uses to pick its exit code.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("'{0}' is not in the system catalog")]
    NotInCatalog(String),

    #[error("t = {t} lies outside the system domain {domain}")]
    Domain { t: f64, domain: String },

    #[error("Gram-Schmidt lost rank at column {column} (residual norm {residual:e})")]
    DegenerateBasis { column: usize, residual: f64 },

    #[error("matrix is not Hermitian positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("matrix is singular (|det| = {det:e})")]
    SingularMatrix { det: f64 },

    #[error("step size underflow at t = {t}")]
    StiffnessFailure { t: f64 },

    #[error("solution blew up; last finite state at t = {t}")]
    Blowup { t: f64 },

    #[error("step budget of {steps} exhausted at t = {t}")]
    StepBudget { steps: usize, t: f64 },

    #[error("system '{0}' has no declared period")]
    NotPeriodic(String),

    #[error("I - X(omega, 0) is singular (smallest singular value {sigma_min:e}); forcing is resonant")]
    ResonantForcing { sigma_min: f64 },

    #[error("a verified dichotomy certificate is required")]
    CertificateRequired,

    #[error("gap condition violated: 2*K*gamma/alpha = {q} >= 1")]
    GapViolation { q: f64 },

    #[error("dichotomy index undetermined: {0}")]
    IndexUndetermined(String),

    #[error("not reducible on this grid: {0}")]
    NotReducibleHere(String),

    #[error("spectral gap at lambda = {lambda} could not be certified")]
    GapNotCertified { lambda: f64 },

    #[error("horizon {horizon} too short for window {window}")]
    HorizonTooShort { horizon: f64, window: f64 },

    #[error("coefficients grow across the horizon (sup |A| from {first} to {last})")]
    UnboundedCoefficients { first: f64, last: f64 },

    #[error("projector mismatch: {0}")]
    ProjectorMismatch(String),

    #[error("fixed-point iteration did not converge in {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::Shape(_)
                | Error::NotInCatalog(_)
                | Error::Domain { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
