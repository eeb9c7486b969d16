//! Parameter sets from a lung-function pilot study (FEV1 in litres, time in
//! years, exposure is smoking at baseline).
//!
//! The `tables` subcommand, the acceptance suite and the guide all build
//! their scenarios from these values, so they live in one place.

use crate::allocation::{CostConstraint, CostSpec};
use crate::covariance::{CovarianceSpec, RsIntuitiveParams, RsParams, RsRawParams, Spacing, TimeGrid};
use crate::solvers::{DesignQuery, EffectSpec};
use crate::variance::{Hypothesis, PopulationSpec};

/// Prevalence of exposure in the pilot sample.
pub const PE: f64 = 0.79;
/// Mean baseline FEV1 among the unexposed.
pub const MU00: f64 = 3.5086;
/// Relative change of the unexposed over 18 years.
pub const P2: f64 = -0.182;
/// Follow-up length of the pilot study in years.
pub const TAU: f64 = 18.0;
/// Spacing between pilot visits in years.
pub const S: f64 = 3.0;
/// Number of follow-up visits in the pilot study.
pub const R: u32 = 6;
/// Variance of age at entry.
pub const V_T0: f64 = 100.0;
/// Number of pilot participants.
pub const N_PILOT: u64 = 133;

/// Compound symmetry fit.
pub fn cs() -> CovarianceSpec {
    CovarianceSpec::Cs { sigma2: 0.3214, rho: 0.857 }
}

/// Damped exponential fit.
pub fn dex() -> CovarianceSpec {
    CovarianceSpec::Dex {
        sigma2: 0.3179,
        rho: 0.896,
        theta: 0.18,
    }
}

/// Random intercept and slope fit in reliability form, with the slope
/// reliability stated for six visits under `rel_mode`.  With visits three
/// years apart or an 18-year follow-up the two modes coincide at six
/// visits and only differ once `r` changes.
pub fn rs_intuitive(slope_rel: f64, rel_mode: Spacing) -> CovarianceSpec {
    CovarianceSpec::Rs {
        params: RsParams::Intuitive(RsIntuitiveParams {
            sigma_t0_2: 0.34,
            rho_t0: 0.877,
            rho_b0b1: -0.32,
            slope_rel,
            r_tilde: R,
            rel_mode,
        }),
    }
}

/// Random intercept and slope fit as rounded variance components.
pub fn rs_raw() -> CovarianceSpec {
    CovarianceSpec::Rs {
        params: RsParams::Raw(RsRawParams {
            sigma_w2: 0.0418,
            sigma_b0_2: 0.2982,
            sigma_b1_2: 0.000095,
            sigma_b0b1: -0.0017,
        }),
    }
}

/// Population with the pilot exposure prevalence.
pub fn population(v_t0: f64, rho_e_t0: f64) -> PopulationSpec {
    PopulationSpec {
        pe: PE,
        v_t0,
        rho_e_t0,
    }
}

/// Percent-scale constant difference effect.
pub fn cmd_effect(p1: f64) -> EffectSpec {
    EffectSpec::Cmd { p1, mu00: MU00 }
}

/// Percent-scale slope difference effect over the pilot follow-up.
pub fn ldd_effect(p3: f64) -> EffectSpec {
    EffectSpec::Ldd {
        p2: P2,
        p3,
        mu00: MU00,
        p1: None,
        tau_ref: Some(TAU),
    }
}

/// Query over an 18-year follow-up split into `r` equal intervals.
pub fn fixed_tau_query(r: u32, cov: CovarianceSpec, hyp: Hypothesis, pop: PopulationSpec, effect: EffectSpec) -> DesignQuery {
    DesignQuery {
        grid: TimeGrid::fixed_tau(r, TAU),
        pop,
        cov,
        hyp,
        effect,
        alpha: 0.05,
    }
}

/// Query with visits every three years.
pub fn fixed_s_query(r: u32, cov: CovarianceSpec, hyp: Hypothesis, pop: PopulationSpec, effect: EffectSpec) -> DesignQuery {
    DesignQuery {
        grid: TimeGrid::fixed_s(r, S),
        pop,
        cov,
        hyp,
        effect,
        alpha: 0.05,
    }
}

/// Interactive-session example: minimum cost for 80% power to detect a
/// 10% slope difference over an 18-year follow-up, with entry ages spread
/// with variance 100 and reliabilities stated for the fixed follow-up.
pub fn demo_query() -> DesignQuery {
    fixed_tau_query(
        1,
        rs_intuitive(0.364, Spacing::FixedTau { tau: TAU }),
        Hypothesis::Ldd,
        population(V_T0, 0.0),
        EffectSpec::Ldd {
            p2: P2,
            p3: 0.1,
            mu00: 3.5,
            p1: None,
            tau_ref: None,
        },
    )
}

/// Cost structure of the interactive-session example.
pub fn demo_cost() -> CostSpec {
    CostSpec {
        c1: 80.0,
        kappa: 20.0,
        constraint: CostConstraint::PowerFloor { pi: 0.8 },
    }
}
