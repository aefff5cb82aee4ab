use thiserror::Error;

use crate::copula::Family;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {family:?} parameter {rho}: {reason}")]
    InvalidParameter {
        family: Family,
        rho: f64,
        reason: &'static str,
    },
    #[error("Kendall's tau {tau} is outside the achievable range of the {family:?} family")]
    UnsupportedTau { family: Family, tau: f64 },
    #[error("{0:?} copula is not differentiable; influence-function estimators need a smooth family")]
    UnsupportedCopula(Family),
    #[error("gamma must be >= 1, got {0}")]
    InvalidGamma(f64),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("{model}: separation detected (|linear predictor| reached {max_eta:.1})")]
    SeparationDetected { model: &'static str, max_eta: f64 },
    #[error("{model}: design matrix is singular or rank deficient")]
    SingularDesign { model: &'static str },
    #[error("{model}: no convergence after {iterations} iterations")]
    NonConvergence {
        model: &'static str,
        iterations: usize,
    },
    #[error("outcome level {level} is not observed in the fitting sample{context}")]
    EmptyLevel { level: usize, context: String },
    #[error("margin row is not monotone at index {index} ({prev} > {next})")]
    InconsistentMargins { index: usize, prev: f64, next: f64 },
    #[error("cell probabilities violate the simplex by {0:e}")]
    InvalidCells(f64),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{failed} of {total} replications failed, above the failure budget")]
    StudyFailed { failed: usize, total: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True for failures raised while fitting a nuisance model.
    pub fn is_fit_failure(&self) -> bool {
        match self {
            Error::SeparationDetected { .. }
            | Error::SingularDesign { .. }
            | Error::NonConvergence { .. }
            | Error::EmptyLevel { .. } => true,
            Error::Fold { source, .. } => source.is_fit_failure(),
            _ => false,
        }
    }
}
