//! Power, sample size and cost-optimal allocation for two-group
//! observational longitudinal studies.
//!
//! A study follows `N` participants, each measured at baseline and at `r`
//! follow-up times.  Exposure is a time-invariant binary covariate that may
//! be correlated with the age at entry.  Three hypotheses are supported:
//! a constant mean difference between groups (CMD), a difference in linear
//! rates of change (LDD), and the same rate-of-change comparison with entry
//! age held fixed by design (BW).
//!
//! The crate is layered.  [`covariance`] builds within-participant
//! covariance matrices and the inverse-sum summaries the variance formulas
//! need.  [`variance`] turns those into the per-participant variance of the
//! exposure effect.  [`solvers`] converts unit variance into power, sample
//! size, required follow-up count and detectable effect.  [`allocation`]
//! picks the cost-optimal number of measurements.  [`oracle`] re-derives
//! key quantities by simulation.
//!
//! ```
//! use longidesign::prelude::*;
//!
//! let query = DesignQuery {
//!     grid: TimeGrid::fixed_s(1, 1.0),
//!     pop: PopulationSpec::new(0.5),
//!     cov: CovarianceSpec::Cs { sigma2: 1.0, rho: 0.5 },
//!     hyp: Hypothesis::Cmd,
//!     effect: EffectSpec::Absolute { beta: 0.2 },
//!     alpha: 0.05,
//! };
//! let n = required_n(0.8, &query).unwrap().n;
//! assert!(power(n, &query).unwrap() >= 0.8);
//! ```

pub mod allocation;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod oracle;
pub mod pilot;
pub mod quadrature;
pub mod scenario;
pub mod solvers;
pub mod variance;

/// The types and functions most programs need.
pub mod prelude {
    pub use crate::allocation::{
        optimal_n, optimal_r, solve_allocation, study_cost, AllocationSolution, CostConstraint, CostSpec, OptimalR,
    };
    pub use crate::covariance::{
        inverse_sums, CovarianceSpec, RsIntuitiveParams, RsParams, RsRawParams, Spacing, SumTriple, TimeGrid,
    };
    pub use crate::error::{DesignError, Result};
    pub use crate::solvers::{
        inflate_for_dropout, min_detectable_effect, power, required_n, required_r, DesignQuery, EffectSpec, RBounds,
        RequiredR,
    };
    pub use crate::variance::{
        unit_variance, var_limit_r_inf, Hypothesis, LimitVariance, PopulationSpec, UnitVariance,
    };
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/concepts/designs.md")]
    mod designs {}
    #[doc = include_str!("../../../book/src/concepts/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/concepts/power.md")]
    mod power {}
    #[doc = include_str!("../../../book/src/concepts/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/concepts/validation.md")]
    mod validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
