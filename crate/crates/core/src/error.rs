use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FhrdError {
    /// An argument lies outside the domain of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),

    /// A moment or integral that does not exist for the given parameters.
    #[error("moment does not exist: {0}")]
    MomentUndefined(String),

    /// The (weighted) design matrix does not have full column rank.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// A bracketed root search found no sign change.
    #[error("no root in bracket [{lo}, {hi}]: {what}")]
    NoRoot { what: String, lo: f64, hi: f64 },

    /// An iterative method failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Adaptive quadrature hit its subdivision limit.
    #[error("quadrature did not converge: value {value:e}, error estimate {error:e} after {intervals} intervals")]
    Quadrature { value: f64, error: f64, intervals: usize },

    /// Input data violate a documented invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl FhrdError {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FhrdError::SingularDesign(_)
                | FhrdError::NoRoot { .. }
                | FhrdError::Numeric(_)
                | FhrdError::Quadrature { .. }
                | FhrdError::MomentUndefined(_)
        )
    }
}

pub type Result<T, E = FhrdError> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> FhrdError {
    FhrdError::Domain(msg.into())
}
