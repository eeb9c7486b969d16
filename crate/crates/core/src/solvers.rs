//! Single-unknown design problems: power, sample size, number of repeated
//! measures and minimum detectable effect.
//!
//! All solvers rest on the Wald-test power function
//! `Φ(sqrt(N) |effect| / sqrt(c' Σ_B c) - z_{1-α/2})`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::{CovarianceSpec, Spacing, TimeGrid};
use crate::error::{DesignError, Result};
use crate::variance::{unit_variance, var_limit_r_inf, Hypothesis, LimitVariance, PopulationSpec};

/// Threshold below which the baseline-change percentage counts as zero.
pub const P2_ZERO_TOL: f64 = 1e-12;

/// Default two-sided significance level.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Size of the exposure effect, on the percent or the absolute scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectSpec {
    /// Constant difference of `p1 * mu00` between exposed and unexposed.
    Cmd {
        /// Relative difference between groups.
        p1: f64,
        /// Mean baseline response among the unexposed.
        mu00: f64,
    },
    /// Slope difference `p2 * p3 * mu00 / tau`.
    ///
    /// `p2` is the relative change of the unexposed over the reference
    /// follow-up, and `p3` the relative excess of that change among the
    /// exposed.  When `p2` is zero the slope difference is
    /// `(1 + p1) * p3 * mu00 / tau` and `p1` must be given.
    Ldd {
        /// Relative change of the unexposed over the reference follow-up.
        p2: f64,
        /// Relative difference in change between exposed and unexposed.
        p3: f64,
        /// Mean baseline response among the unexposed.
        mu00: f64,
        /// Baseline relative difference; only used when `p2` is zero.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p1: Option<f64>,
        /// Follow-up length over which `p2` and `p3` are stated.  Defaults to
        /// the fixed follow-up of the time grid and is required when the grid
        /// has a fixed spacing instead.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_ref: Option<f64>,
    },
    /// Coefficient given directly (response units, or per time unit for
    /// slope differences).
    Absolute {
        /// The coefficient under the alternative.
        beta: f64,
    },
}

impl EffectSpec {
    /// Reference follow-up for percent-scale slope effects.
    pub fn reference_tau(&self, grid: &TimeGrid) -> Result<f64> {
        let tau = match (*self, grid.mode) {
            (EffectSpec::Ldd { tau_ref: Some(t), .. }, _) => t,
            (_, Spacing::FixedTau { tau }) => tau,
            _ => {
                return Err(DesignError::domain(
                    "effect.tau_ref",
                    "required for a percent-scale slope effect when the spacing is fixed",
                ))
            }
        };
        if tau.is_finite() && tau > 0.0 {
            Ok(tau)
        } else {
            Err(DesignError::domain("effect.tau_ref", "must be > 0"))
        }
    }

    /// Model coefficient implied by the effect for the given hypothesis.
    ///
    /// ```
    /// use longidesign::prelude::*;
    /// let e = EffectSpec::Ldd { p2: -0.182, p3: 0.1, mu00: 3.5086, p1: None, tau_ref: None };
    /// let g = e.coefficient(Hypothesis::Ldd, &TimeGrid::fixed_tau(6, 18.0)).unwrap();
    /// assert!((g - (-0.182 * 0.1 * 3.5086 / 18.0)).abs() < 1e-15);
    /// ```
    pub fn coefficient(&self, hyp: Hypothesis, grid: &TimeGrid) -> Result<f64> {
        match (*self, hyp) {
            (EffectSpec::Absolute { beta }, _) => finite(beta, "effect.beta"),
            (EffectSpec::Cmd { p1, mu00 }, Hypothesis::Cmd) => {
                nonzero_mu(mu00)?;
                finite(p1 * mu00, "effect.p1")
            }
            (EffectSpec::Ldd { p2, p3, mu00, p1, .. }, Hypothesis::Ldd | Hypothesis::Bw) => {
                nonzero_mu(mu00)?;
                let tau = self.reference_tau(grid)?;
                if p2.abs() < P2_ZERO_TOL {
                    let p1 = p1.ok_or_else(|| {
                        DesignError::domain("effect.p1", "required when p2 is zero")
                    })?;
                    finite((1.0 + p1) * p3 * mu00 / tau, "effect.p3")
                } else {
                    finite(p2 * p3 * mu00 / tau, "effect.p3")
                }
            }
            (EffectSpec::Cmd { .. }, _) => Err(DesignError::domain(
                "effect.scale",
                "a constant-difference effect needs the cmd hypothesis",
            )),
            (EffectSpec::Ldd { .. }, _) => Err(DesignError::domain(
                "effect.scale",
                "a slope-difference effect needs the ldd or bw hypothesis",
            )),
        }
    }
}

fn finite(v: f64, field: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DesignError::domain(field, "must be finite"))
    }
}

fn nonzero_mu(mu00: f64) -> Result<()> {
    if mu00.is_finite() && mu00 != 0.0 {
        Ok(())
    } else {
        Err(DesignError::domain("effect.mu00", "must be finite and non-zero"))
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Everything needed to evaluate the power of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignQuery {
    /// Measurement schedule.
    pub grid: TimeGrid,
    /// Exposure prevalence and entry-time distribution.
    pub pop: PopulationSpec,
    /// Residual covariance model.
    pub cov: CovarianceSpec,
    /// Alternative hypothesis.
    pub hyp: Hypothesis,
    /// Effect size under the alternative.
    pub effect: EffectSpec,
    /// Two-sided significance level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl DesignQuery {
    /// Copy of the query with a different number of follow-up measures.
    pub fn with_r(&self, r: u32) -> Self {
        DesignQuery {
            grid: self.grid.with_r(r),
            ..*self
        }
    }

    /// Validates every component for design use.
    pub fn validate_design(&self) -> Result<()> {
        self.grid.validate()?;
        self.pop.validate()?;
        self.cov.validate_for_design()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DesignError::domain("alpha", "must lie in (0, 1)"));
        }
        if self.hyp != Hypothesis::Cmd && self.grid.r == 0 {
            return Err(DesignError::Unidentifiable(
                "a slope difference needs at least one follow-up measure".into(),
            ));
        }
        Ok(())
    }

    /// Effect coefficient for the current grid.
    pub fn coefficient(&self) -> Result<f64> {
        self.effect.coefficient(self.hyp, &self.grid)
    }

    /// `z_{1-α/2}`.
    pub fn z_alpha(&self) -> f64 {
        z_quantile(1.0 - self.alpha / 2.0)
    }
}

/// Standard normal quantile.
pub fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal distribution function.
pub fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

fn check_probability(p: f64, field: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DesignError::domain(field, format!("must lie in (0, 1), got {p}")))
    }
}

/// Ceiling that ignores rounding noise just above an integer.
pub(crate) fn ceil_tol(x: f64) -> f64 {
    let k = x.round();
    if (x - k).abs() <= 1e-9 * x.abs().max(1.0) {
        k
    } else {
        x.ceil()
    }
}

/// Power for `n` participants given a unit variance and coefficient.
pub fn power_from_variance(n: f64, coefficient: f64, unit_variance: f64, alpha: f64) -> f64 {
    let z = z_quantile(1.0 - alpha / 2.0);
    let p = phi((n / unit_variance).sqrt() * coefficient.abs() - z);
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Power of the Wald test for `n` participants.
///
/// ```
/// use longidesign::prelude::*;
/// let q = DesignQuery {
///     grid: TimeGrid::fixed_s(0, 1.0),
///     pop: PopulationSpec::new(0.5),
///     cov: CovarianceSpec::Cs { sigma2: 1.0, rho: 0.0 },
///     hyp: Hypothesis::Cmd,
///     effect: EffectSpec::Absolute { beta: 0.0 },
///     alpha: 0.05,
/// };
/// // With no effect the power is the one-sided rejection rate alpha / 2.
/// assert!((power(16, &q).unwrap() - 0.025).abs() < 1e-9);
/// ```
pub fn power(n: u64, query: &DesignQuery) -> Result<f64> {
    if n < 2 {
        return Err(DesignError::domain("n", "must be >= 2"));
    }
    let v = unit_variance(query)?.value;
    Ok(power_from_variance(n as f64, query.coefficient()?, v, query.alpha))
}

/// Required sample size, as an integer and before rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    /// Smallest integer sample size reaching the target (at least 2).
    pub n: u64,
    /// Unrounded solution of the sample size equation.
    pub exact: f64,
}

/// Sample size reaching `target_power`.
pub fn required_n(target_power: f64, query: &DesignQuery) -> Result<SampleSize> {
    check_probability(target_power, "power")?;
    let beta = query.coefficient()?;
    if beta == 0.0 {
        return Err(DesignError::domain("effect", "a zero effect cannot be detected"));
    }
    let v = unit_variance(query)?.value;
    Ok(sample_size_from_variance(target_power, beta, v, query.alpha))
}

pub(crate) fn sample_size_from_variance(target_power: f64, beta: f64, v: f64, alpha: f64) -> SampleSize {
    let z = z_quantile(target_power) + z_quantile(1.0 - alpha / 2.0);
    let exact = v * z * z / (beta * beta);
    SampleSize {
        n: (ceil_tol(exact) as u64).max(2),
        exact,
    }
}

/// Inclusive search range for the number of follow-up measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RBounds {
    /// Smallest admissible `r`.
    pub lo: u32,
    /// Largest admissible `r`.
    pub hi: u32,
}

impl RBounds {
    /// Default range: `[0, 1000]` for a constant difference with fixed
    /// spacing, `[1, 1000]` otherwise.
    pub fn default_for(query: &DesignQuery) -> Self {
        RBounds {
            lo: min_r(query),
            hi: 1000,
        }
    }

    /// Default lower bound with a caller-supplied upper bound.
    pub fn up_to(query: &DesignQuery, hi: u32) -> Self {
        RBounds { lo: min_r(query), hi }
    }

    pub(crate) fn validate(&self, query: &DesignQuery) -> Result<()> {
        if self.lo > self.hi {
            return Err(DesignError::domain("r_bounds", "lower bound exceeds upper bound"));
        }
        if self.lo < min_r(query) {
            return Err(DesignError::domain(
                "r_bounds.lo",
                format!("must be >= {} for this hypothesis and spacing", min_r(query)),
            ));
        }
        Ok(())
    }
}

fn min_r(query: &DesignQuery) -> u32 {
    if query.hyp == Hypothesis::Cmd && !query.grid.mode.is_fixed_tau() {
        0
    } else {
        1
    }
}

/// Where the reported maximum power of an unattainable target comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxPowerSource {
    /// Power in the limit of infinitely many measures.
    Limit,
    /// Best power found within the search bounds, attained at `r`.
    Bound {
        /// Number of follow-up measures giving the best power.
        r: u32,
    },
}

/// Outcome of the search for the number of repeated measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequiredR {
    /// Smallest `r` reaching the target, with its power.
    Attained {
        /// Number of follow-up measures.
        r: u32,
        /// Power at that `r`.
        power: f64,
    },
    /// No admissible `r` reaches the target.
    Unattainable {
        /// Largest power available.
        max_power: f64,
        /// Origin of `max_power`.
        source: MaxPowerSource,
    },
}

/// Smallest number of follow-up measures reaching `target_power` with `n`
/// participants.
///
/// A closed form is used for a constant difference under compound symmetry
/// when entry times do not confound exposure; otherwise the range is
/// scanned, after checking the large-`r` limit.
pub fn required_r(target_power: f64, n: u64, query: &DesignQuery, bounds: RBounds) -> Result<RequiredR> {
    check_probability(target_power, "power")?;
    if n < 2 {
        return Err(DesignError::domain("n", "must be >= 2"));
    }
    bounds.validate(query)?;
    query.with_r(bounds.hi).validate_design()?;
    let beta = query.coefficient()?;
    let nf = n as f64;
    let power_at = |r: u32| -> Result<f64> {
        let q = query.with_r(r);
        Ok(power_from_variance(nf, q.coefficient()?, unit_variance(&q)?.value, q.alpha))
    };
    let z = z_quantile(target_power) + query.z_alpha();
    let pq = query.pop.pq();

    let cs_params = match query.cov {
        CovarianceSpec::Cs { sigma2, rho } => Some((sigma2, rho)),
        CovarianceSpec::Dex { sigma2, rho, theta: 0.0 } => Some((sigma2, rho)),
        _ => None,
    };
    let unconfounded = query.pop.v_t0 == 0.0 || query.pop.rho_e_t0 == 0.0;
    if let (Some((sigma2, rho)), Hypothesis::Cmd, true) = (cs_params, query.hyp, unconfounded) {
        let a = beta * beta * nf * pq;
        let b = z * z * sigma2;
        if a <= b * rho {
            let max_power = power_from_variance(nf, beta, sigma2 * rho / pq, query.alpha);
            return Ok(RequiredR::Unattainable {
                max_power,
                source: MaxPowerSource::Limit,
            });
        }
        let root = (b - a) / (a - b * rho);
        let mut r = if root <= f64::from(bounds.lo) {
            bounds.lo
        } else {
            ceil_tol(root).min(f64::from(u32::MAX)) as u32
        };
        // Guard the ceiling against rounding in either direction.
        while r > bounds.lo && r <= bounds.hi && power_at(r - 1)? >= target_power {
            r -= 1;
        }
        while r <= bounds.hi && power_at(r)? < target_power {
            r += 1;
        }
        if r > bounds.hi {
            return Ok(RequiredR::Unattainable {
                max_power: power_at(bounds.hi)?,
                source: MaxPowerSource::Bound { r: bounds.hi },
            });
        }
        return Ok(RequiredR::Attained {
            r,
            power: power_at(r)?,
        });
    }

    if let LimitVariance::Finite(lv) = var_limit_r_inf(&query.cov, query.hyp, query.grid.mode, &query.pop)? {
        let max_power = power_from_variance(nf, beta, lv, query.alpha);
        if max_power < target_power {
            return Ok(RequiredR::Unattainable {
                max_power,
                source: MaxPowerSource::Limit,
            });
        }
    }

    let mut best = (bounds.lo, f64::NEG_INFINITY);
    for r in bounds.lo..=bounds.hi {
        let p = power_at(r)?;
        if p >= target_power {
            return Ok(RequiredR::Attained { r, power: p });
        }
        if p > best.1 {
            best = (r, p);
        }
    }
    Ok(RequiredR::Unattainable {
        max_power: best.1,
        source: MaxPowerSource::Bound { r: best.0 },
    })
}

/// Minimum detectable effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mde {
    /// Smallest detectable absolute coefficient.
    pub coefficient: f64,
    /// The same effect on the percent scale of the query's effect
    /// specification (`p1` for a constant difference, `p3` for a slope
    /// difference); `None` for absolute effects.
    pub fraction: Option<f64>,
}

/// Smallest effect detectable with `n` participants at `target_power`.
///
/// The size of the effect in the query is ignored; its scale and the
/// fixed parameters (`mu00`, `p2`, `p1`) are used for the conversion back to
/// a fraction.
pub fn min_detectable_effect(target_power: f64, n: u64, query: &DesignQuery) -> Result<Mde> {
    check_probability(target_power, "power")?;
    if n < 2 {
        return Err(DesignError::domain("n", "must be >= 2"));
    }
    let v = unit_variance(query)?.value;
    let z = z_quantile(target_power) + query.z_alpha();
    let coefficient = (v * z * z / n as f64).sqrt();
    let fraction = match (query.effect, query.hyp) {
        (EffectSpec::Absolute { .. }, _) => None,
        (EffectSpec::Cmd { mu00, .. }, Hypothesis::Cmd) => {
            nonzero_mu(mu00)?;
            Some(coefficient / mu00.abs())
        }
        (EffectSpec::Ldd { p2, mu00, p1, .. }, Hypothesis::Ldd | Hypothesis::Bw) => {
            nonzero_mu(mu00)?;
            let tau = query.effect.reference_tau(&query.grid)?;
            let scale = if p2.abs() < P2_ZERO_TOL {
                let p1 = p1.ok_or_else(|| DesignError::domain("effect.p1", "required when p2 is zero"))?;
                (1.0 + p1).abs()
            } else {
                p2.abs()
            };
            Some(coefficient * tau / (scale * mu00.abs()))
        }
        _ => {
            // Mismatched scale: surface the same error as the coefficient.
            query.coefficient()?;
            None
        }
    };
    Ok(Mde { coefficient, fraction })
}

/// Inflates a sample size for an expected drop-out fraction `f`.
///
/// ```
/// assert_eq!(longidesign::solvers::inflate_for_dropout(100, 0.2).unwrap(), 125);
/// ```
pub fn inflate_for_dropout(n: u64, f: f64) -> Result<u64> {
    if !(0.0..1.0).contains(&f) {
        return Err(DesignError::domain("dropout", "must lie in [0, 1)"));
    }
    Ok(ceil_tol(n as f64 / (1.0 - f)) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cmd_query(sigma2: f64, rho: f64, r: u32, beta: f64) -> DesignQuery {
        DesignQuery {
            grid: TimeGrid::fixed_s(r, 1.0),
            pop: PopulationSpec::new(0.5),
            cov: CovarianceSpec::Cs { sigma2, rho },
            hyp: Hypothesis::Cmd,
            effect: EffectSpec::Absolute { beta },
            alpha: 0.05,
        }
    }

    #[test]
    fn power_examples() {
        // Unit variance 4 from sigma2 = 1, r = 0, pe = 0.5.
        let q = cmd_query(1.0, 0.0, 0, 1.0);
        let p = power(16, &q).unwrap();
        let expected = phi(2.0 - 1.959_963_984_540_054);
        assert_relative_eq!(p, expected, max_relative = 1e-12);
        assert!((p - 0.5160).abs() < 1e-4);
    }

    #[test]
    fn required_n_round_trip() {
        let q = cmd_query(2.0, 0.3, 3, 0.4);
        for n in [10u64, 57, 300] {
            let p = power(n, &q).unwrap();
            assert_eq!(required_n(p, &q).unwrap().n, n);
        }
        assert!(required_n(0.9, &cmd_query(1.0, 0.0, 0, 0.0)).is_err());
    }

    #[test]
    fn required_r_closed_form_matches_scan() {
        // Choose n so that the real root equals 2.3 for sigma2 = 1, rho = 0.2.
        let (sigma2, rho, beta, target) = (1.0, 0.2, 0.5, 0.8);
        let z = z_quantile(target) + z_quantile(0.975);
        let root = 2.3;
        // root = (B - A) / (A - B rho) solved for A = beta^2 n pq.
        let b = z * z * sigma2;
        let a = b * (1.0 + root * rho) / (1.0 + root);
        let n_exact = a / (beta * beta * 0.25);
        let n = n_exact.ceil() as u64;
        let q = cmd_query(sigma2, rho, 0, beta);
        let got = required_r(target, n, &q, RBounds::default_for(&q)).unwrap();
        let RequiredR::Attained { r, .. } = got else { panic!("expected attainable") };
        assert_eq!(r, 3);
        assert!(power(n, &q.with_r(3)).unwrap() >= target);
        assert!(power(n, &q.with_r(2)).unwrap() < target);
    }

    #[test]
    fn required_r_unattainable_reports_limit_power() {
        let q = cmd_query(1.0, 0.8, 0, 0.1);
        match required_r(0.9, 50, &q, RBounds::default_for(&q)).unwrap() {
            RequiredR::Unattainable { max_power, source } => {
                assert_eq!(source, MaxPowerSource::Limit);
                let expected = phi((50.0_f64 * 0.01 / (0.8 / 0.25)).sqrt() - z_quantile(0.975));
                assert_relative_eq!(max_power, expected, max_relative = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dropout_examples() {
        assert_eq!(inflate_for_dropout(100, 0.0).unwrap(), 100);
        assert_eq!(inflate_for_dropout(100, 0.2).unwrap(), 125);
        assert_eq!(inflate_for_dropout(918, 0.3).unwrap(), 1312);
        assert!(inflate_for_dropout(918, 1.0).is_err());
    }

    #[test]
    fn alternate_slope_effect_when_p2_is_zero() {
        let grid = TimeGrid::fixed_tau(4, 10.0);
        let e = EffectSpec::Ldd { p2: 0.0, p3: 0.2, mu00: 5.0, p1: Some(0.1), tau_ref: None };
        assert_relative_eq!(e.coefficient(Hypothesis::Ldd, &grid).unwrap(), 1.1 * 0.2 * 5.0 / 10.0);
        let e = EffectSpec::Ldd { p2: 0.0, p3: 0.2, mu00: 5.0, p1: None, tau_ref: None };
        assert!(e.coefficient(Hypothesis::Ldd, &grid).is_err());
        let e = EffectSpec::Ldd { p2: 0.1, p3: 0.2, mu00: 5.0, p1: None, tau_ref: None };
        assert!(e.coefficient(Hypothesis::Ldd, &TimeGrid::fixed_s(4, 1.0)).is_err());
    }
}
