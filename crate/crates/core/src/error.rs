//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures raised by the design engine.
///
/// Validation problems (bad user input) and computational problems (a valid
/// input whose answer does not exist) are kept apart so that front ends can
/// map them to different exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    /// A parameter lies outside its admissible domain.
    #[error("invalid value for `{field}`: {reason}")]
    Domain {
        /// Name (or dotted path) of the offending parameter.
        field: String,
        /// Human readable description of the violated constraint.
        reason: String,
    },

    /// A matrix expected to be symmetric positive definite could not be
    /// factorised.
    #[error("matrix is not symmetric positive definite: {0}")]
    Decomposition(String),

    /// The effect of interest is not identifiable for the requested design,
    /// e.g. a slope difference with no follow-up measurement.
    #[error("effect is not identifiable: {0}")]
    Unidentifiable(String),

    /// The asymptotic variance is infinite (for instance when nobody, or
    /// everybody, is exposed).
    #[error("unit variance is infinite: {0}")]
    InfiniteVariance(String),

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge with {nodes} nodes (relative change {achieved:e})")]
    Quadrature {
        /// Largest node count tried.
        nodes: usize,
        /// Relative change between the last two refinements.
        achieved: f64,
    },

    /// A budget leaves room for fewer than two participants.
    #[error("budget {budget} buys only {n} participant(s) at r = {r}")]
    BudgetTooSmall {
        /// Total budget.
        budget: f64,
        /// Participants the budget affords.
        n: u64,
        /// Number of follow-up measurements considered.
        r: u32,
    },
}

impl DesignError {
    /// Convenience constructor for [`DesignError::Domain`].
    pub fn domain(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DesignError::Domain {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prepends `prefix` to the field path of a validation error; other
    /// errors are returned unchanged.
    pub fn prefixed(self, prefix: &str) -> Self {
        match self {
            DesignError::Domain { field, reason } => DesignError::Domain {
                field: format!("{prefix}{field}"),
                reason,
            },
            other => other,
        }
    }

    /// True when the error stems from invalid input rather than from the
    /// computation itself.
    pub fn is_validation(&self) -> bool {
        matches!(self, DesignError::Domain { .. })
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, DesignError>;
