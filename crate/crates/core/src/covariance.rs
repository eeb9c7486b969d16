//! Residual covariance structures for the repeated measures of one subject.
//!
//! Three families are supported: compound symmetry (CS), damped exponential
//! (DEX, with AR(1) as the special case `theta = 1`) and random intercepts
//! and slopes (RS).  Besides building the `(r+1) x (r+1)` matrices, this
//! module computes the weighted sums of the inverse matrix that drive every
//! variance formula of the crate, both numerically and in closed form where
//! one exists.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};

/// Either a fixed spacing between measurements or a fixed total follow-up.
///
/// The same type describes how a time grid grows with `r` and the horizon
/// at which a slope reliability was elicited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Spacing {
    /// Measurements are `s` time units apart; follow-up grows as `s * r`.
    FixedS {
        /// Time units between consecutive measurements.
        s: f64,
    },
    /// Total follow-up `tau` is fixed; spacing shrinks as `tau / r`.
    FixedTau {
        /// Total length of follow-up.
        tau: f64,
    },
}

impl Spacing {
    /// Spacing between measurements when `r` follow-up measures are taken.
    pub fn spacing(&self, r: u32) -> Result<f64> {
        match *self {
            Spacing::FixedS { s } => Ok(s),
            Spacing::FixedTau { tau } => {
                if r == 0 {
                    Err(DesignError::domain(
                        "grid.r",
                        "a fixed follow-up length needs at least one follow-up measure",
                    ))
                } else {
                    Ok(tau / f64::from(r))
                }
            }
        }
    }

    /// Total follow-up length when `r` follow-up measures are taken.
    pub fn tau(&self, r: u32) -> f64 {
        match *self {
            Spacing::FixedS { s } => s * f64::from(r),
            Spacing::FixedTau { tau } => tau,
        }
    }

    /// True for the fixed-follow-up variant.
    pub fn is_fixed_tau(&self) -> bool {
        matches!(self, Spacing::FixedTau { .. })
    }

    /// Checks that the stored length is finite and strictly positive.
    pub fn validate(&self, field: &str) -> Result<()> {
        let (name, v) = match *self {
            Spacing::FixedS { s } => ("s", s),
            Spacing::FixedTau { tau } => ("tau", tau),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(DesignError::domain(
                format!("{field}.{name}"),
                format!("must be finite and > 0, got {v}"),
            ))
        }
    }
}

/// Measurement schedule: a baseline plus `r` follow-up measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    /// Number of post-baseline measurements.
    pub r: u32,
    /// How the spacing behaves as `r` changes.
    pub mode: Spacing,
}

impl TimeGrid {
    /// Grid with fixed spacing `s`.
    pub fn fixed_s(r: u32, s: f64) -> Self {
        TimeGrid {
            r,
            mode: Spacing::FixedS { s },
        }
    }

    /// Grid with fixed total follow-up `tau`.
    pub fn fixed_tau(r: u32, tau: f64) -> Self {
        TimeGrid {
            r,
            mode: Spacing::FixedTau { tau },
        }
    }

    /// Same schedule rule with a different number of follow-up measures.
    pub fn with_r(&self, r: u32) -> Self {
        TimeGrid { r, mode: self.mode }
    }

    /// Spacing between consecutive measurements.
    pub fn spacing(&self) -> Result<f64> {
        self.mode.spacing(self.r)
    }

    /// Total follow-up `s * r`.
    pub fn tau(&self) -> f64 {
        self.mode.tau(self.r)
    }

    /// Validates the spacing parameter.
    pub fn validate(&self) -> Result<()> {
        self.mode.validate("grid.mode")
    }
}

/// Random-effects parameters of the RS model in their native form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsRawParams {
    /// Within-subject (measurement) variance.
    pub sigma_w2: f64,
    /// Variance of the random intercept.
    pub sigma_b0_2: f64,
    /// Variance of the random slope, per squared time unit.
    pub sigma_b1_2: f64,
    /// Covariance between random intercept and random slope.
    pub sigma_b0b1: f64,
}

impl RsRawParams {
    /// Checks positivity and positive semi-definiteness of the random-effects
    /// covariance.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w2.is_finite() && self.sigma_w2 > 0.0) {
            return Err(DesignError::domain("sigma_w2", "must be > 0"));
        }
        if !(self.sigma_b0_2.is_finite() && self.sigma_b0_2 >= 0.0) {
            return Err(DesignError::domain("sigma_b0_2", "must be >= 0"));
        }
        if !(self.sigma_b1_2.is_finite() && self.sigma_b1_2 >= 0.0) {
            return Err(DesignError::domain("sigma_b1_2", "must be >= 0"));
        }
        let bound = self.sigma_b0_2 * self.sigma_b1_2;
        if !self.sigma_b0b1.is_finite() || self.sigma_b0b1 * self.sigma_b0b1 > bound * (1.0 + 1e-12) {
            return Err(DesignError::domain(
                "sigma_b0b1",
                "squared covariance exceeds the product of the variances",
            ));
        }
        Ok(())
    }

    /// Random-effects covariance matrix `D`.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[self.sigma_b0_2, self.sigma_b0b1, self.sigma_b0b1, self.sigma_b1_2],
        )
    }
}

/// Random-effects parameters expressed as variances and reliabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsIntuitiveParams {
    /// Residual variance at baseline, `sigma_w2 + sigma_b0_2`.
    pub sigma_t0_2: f64,
    /// Baseline reliability, `sigma_b0_2 / sigma_t0_2`.
    pub rho_t0: f64,
    /// Correlation between random intercept and random slope.
    pub rho_b0b1: f64,
    /// Share of the slope-estimate variance due to true slope variation.
    pub slope_rel: f64,
    /// Trial number of follow-up measures at which `slope_rel` is stated.
    pub r_tilde: u32,
    /// Spacing rule under which `slope_rel` is stated.
    pub rel_mode: Spacing,
}

impl RsIntuitiveParams {
    /// Checks ranges of the reliabilities and variances.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t0_2.is_finite() && self.sigma_t0_2 > 0.0) {
            return Err(DesignError::domain("sigma_t0_2", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.rho_t0) {
            return Err(DesignError::domain("rho_t0", "must lie in [0, 1)"));
        }
        if !(-1.0..=1.0).contains(&self.rho_b0b1) {
            return Err(DesignError::domain("rho_b0b1", "must lie in [-1, 1]"));
        }
        if !(0.0..1.0).contains(&self.slope_rel) {
            return Err(DesignError::domain(
                "slope_rel",
                "must lie in [0, 1); a reliability of one implies infinite slope variance",
            ));
        }
        if self.r_tilde == 0 {
            return Err(DesignError::domain("r_tilde", "must be >= 1"));
        }
        self.rel_mode.validate("rel_mode")
    }
}

/// Random-effects parameters in either parameterisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RsParams {
    /// Variances and covariance of the random effects.
    Raw(RsRawParams),
    /// Baseline variance, reliabilities and intercept-slope correlation.
    Intuitive(RsIntuitiveParams),
}

impl RsParams {
    /// Raw parameters, converting from the intuitive form when needed.
    pub fn to_raw(&self) -> Result<RsRawParams> {
        match self {
            RsParams::Raw(raw) => {
                raw.validate()?;
                Ok(*raw)
            }
            RsParams::Intuitive(p) => rs_intuitive_to_raw(p),
        }
    }
}

/// Residual covariance model of the repeated measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// Compound symmetry: common variance and common correlation.
    Cs {
        /// Variance of each measurement.
        sigma2: f64,
        /// Correlation between any two measurements.
        rho: f64,
    },
    /// Damped exponential: correlation `rho^((|dt|)^theta)`.
    Dex {
        /// Variance of each measurement.
        sigma2: f64,
        /// Correlation between measurements one time unit apart.
        rho: f64,
        /// Damping exponent in `[0, 1]`; 0 gives CS and 1 gives AR(1).
        theta: f64,
    },
    /// Random intercepts and slopes plus independent measurement error.
    Rs {
        /// Random-effects parameters.
        params: RsParams,
    },
}

impl CovarianceSpec {
    /// Validates parameters for use in design calculations, which require
    /// a non-negative correlation.
    pub fn validate_for_design(&self) -> Result<()> {
        match *self {
            CovarianceSpec::Cs { sigma2, rho } => {
                check_sigma2(sigma2).map_err(|e| e.prefixed("cov."))?;
                if !(0.0..1.0).contains(&rho) {
                    return Err(DesignError::domain("cov.rho", "design use requires 0 <= rho < 1"));
                }
                Ok(())
            }
            CovarianceSpec::Dex { sigma2, rho, theta } => {
                check_sigma2(sigma2)
                    .and_then(|_| check_dex(rho, theta))
                    .map_err(|e| e.prefixed("cov."))
            }
            CovarianceSpec::Rs { params } => {
                let prefix = match params {
                    RsParams::Raw(_) => "cov.params.raw.",
                    RsParams::Intuitive(_) => "cov.params.intuitive.",
                };
                params.to_raw().map(|_| ()).map_err(|e| e.prefixed(prefix))
            }
        }
    }

    /// Covariance matrix for a subject whose first measurement is at `t0`,
    /// with `r` follow-ups spaced `s` apart.  `t0` only matters for RS.
    pub fn matrix(&self, t0: f64, s: f64, r: u32) -> Result<DMatrix<f64>> {
        match *self {
            CovarianceSpec::Cs { sigma2, rho } => build_cs(sigma2, rho, r),
            CovarianceSpec::Dex { sigma2, rho, theta } => build_dex(sigma2, rho, theta, s, r),
            CovarianceSpec::Rs { params } => build_rs(&params.to_raw()?, t0, s, r),
        }
    }

    /// True when the matrix does not depend on the subject's entry time.
    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, CovarianceSpec::Rs { .. })
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(())
    } else {
        Err(DesignError::domain("sigma2", format!("must be > 0, got {sigma2}")))
    }
}

fn check_dex(rho: f64, theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(DesignError::domain("rho", "damped exponential requires 0 <= rho < 1"));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(DesignError::domain("theta", "must lie in [0, 1]"));
    }
    Ok(())
}

/// Compound-symmetry matrix `sigma2 * (rho * J + (1 - rho) * I)` of order
/// `r + 1`.
///
/// Negative correlations are accepted here (design solvers reject them).
///
/// ```
/// let m = longidesign::covariance::build_cs(2.0, 0.5, 1).unwrap();
/// assert_eq!(m[(0, 1)], 1.0);
/// assert_eq!(m[(1, 1)], 2.0);
/// ```
pub fn build_cs(sigma2: f64, rho: f64, r: u32) -> Result<DMatrix<f64>> {
    check_sigma2(sigma2)?;
    if !(rho > -1.0 && rho < 1.0) {
        return Err(DesignError::domain("rho", format!("must lie in (-1, 1), got {rho}")));
    }
    let n = r as usize + 1;
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { sigma2 } else { sigma2 * rho }))
}

/// Damped-exponential matrix with entries `sigma2 * rho^((|j - j'| s)^theta)`.
///
/// The diagonal is always `sigma2`, so `theta = 0` reproduces compound
/// symmetry and `theta = 1` gives AR(1) in physical time.
pub fn build_dex(sigma2: f64, rho: f64, theta: f64, s: f64, r: u32) -> Result<DMatrix<f64>> {
    check_sigma2(sigma2)?;
    check_dex(rho, theta)?;
    if !(s.is_finite() && s > 0.0) {
        return Err(DesignError::domain("s", "must be > 0"));
    }
    let n = r as usize + 1;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sigma2
        } else {
            let lag = (i as f64 - j as f64).abs() * s;
            sigma2 * rho.powf(lag.powf(theta))
        }
    }))
}

/// Design matrix `Z` of the random effects: a column of ones and the
/// measurement times `t0 + j s`.
pub fn rs_z_matrix(t0: f64, s: f64, r: u32) -> DMatrix<f64> {
    let n = r as usize + 1;
    DMatrix::from_fn(n, 2, |j, c| if c == 0 { 1.0 } else { t0 + s * j as f64 })
}

/// Random intercepts and slopes matrix `Z D Z' + sigma_w2 I`.
pub fn build_rs(raw: &RsRawParams, t0: f64, s: f64, r: u32) -> Result<DMatrix<f64>> {
    raw.validate()?;
    let z = rs_z_matrix(t0, s, r);
    let n = r as usize + 1;
    let mut m = &z * raw.d_matrix() * z.transpose();
    for i in 0..n {
        m[(i, i)] += raw.sigma_w2;
    }
    // Symmetrise away rounding so downstream factorisations see an exact
    // symmetric input.
    let mt = m.transpose();
    Ok((m + mt) * 0.5)
}

/// `r (r+1) (r+2)` for the slope-reliability formulas.
fn cubic(r: f64) -> f64 {
    r * (r + 1.0) * (r + 2.0)
}

/// Converts intuitive RS parameters to raw variances.
///
/// The slope variance is the unique value making the slope reliability at
/// `r_tilde`, under `rel_mode`, equal to `slope_rel`.
pub fn rs_intuitive_to_raw(p: &RsIntuitiveParams) -> Result<RsRawParams> {
    p.validate()?;
    let sigma_b0_2 = p.rho_t0 * p.sigma_t0_2;
    let sigma_w2 = (1.0 - p.rho_t0) * p.sigma_t0_2;
    let odds = p.slope_rel / (1.0 - p.slope_rel);
    let rt = f64::from(p.r_tilde);
    let sigma_b1_2 = match p.rel_mode {
        Spacing::FixedS { s } => 12.0 * sigma_w2 / (s * s * cubic(rt)) * odds,
        Spacing::FixedTau { tau } => 12.0 * sigma_w2 * rt / (tau * tau * (rt + 1.0) * (rt + 2.0)) * odds,
    };
    let sigma_b0b1 = p.rho_b0b1 * (sigma_b0_2 * sigma_b1_2).sqrt();
    let raw = RsRawParams {
        sigma_w2,
        sigma_b0_2,
        sigma_b1_2,
        sigma_b0b1,
    };
    raw.validate()?;
    Ok(raw)
}

/// Slope reliability implied by raw RS parameters when `r` follow-up
/// measures are taken under the spacing rule `mode`.
///
/// This is the share of the variance of a subject's least-squares slope that
/// comes from true between-subject slope variation.
pub fn slope_reliability(raw: &RsRawParams, mode: Spacing, r: u32) -> Result<f64> {
    if r == 0 {
        return Err(DesignError::domain("r", "slope reliability needs r >= 1"));
    }
    let rf = f64::from(r);
    let (signal, noise) = match mode {
        Spacing::FixedS { s } => (raw.sigma_b1_2 * s * s * cubic(rf), 12.0 * raw.sigma_w2),
        Spacing::FixedTau { tau } => (
            raw.sigma_b1_2 * tau * tau * (rf + 1.0) * (rf + 2.0),
            12.0 * rf * raw.sigma_w2,
        ),
    };
    Ok(signal / (noise + signal))
}

/// Weighted sums of the entries `v_jj'` of an inverse covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumTriple {
    /// `sum_jj' v_jj'`.
    pub s0: f64,
    /// `sum_jj' j v_jj'`.
    pub s1: f64,
    /// `sum_jj' j j' v_jj'`.
    pub s2: f64,
    /// `s0 s2 - s1^2`.
    pub det_a: f64,
}

impl SumTriple {
    fn new(s0: f64, s1: f64, s2: f64) -> Self {
        SumTriple {
            s0,
            s1,
            s2,
            det_a: s0 * s2 - s1 * s1,
        }
    }
}

/// Cholesky factorisation with a descriptive error on failure.
pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(DesignError::Decomposition("matrix is not square".into()));
    }
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(DesignError::Decomposition(format!(
                    "entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }
    nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| DesignError::Decomposition("Cholesky factorisation failed".into()))
}

/// Computes the inverse sums of a symmetric positive definite matrix
/// numerically, with time indices `0..=r`.
///
/// ```
/// use nalgebra::DMatrix;
/// let t = longidesign::covariance::inverse_sums(&DMatrix::identity(3, 3)).unwrap();
/// assert!((t.s0 - 3.0).abs() < 1e-12 && (t.s2 - 5.0).abs() < 1e-12);
/// ```
pub fn inverse_sums(m: &DMatrix<f64>) -> Result<SumTriple> {
    let chol = cholesky(m)?;
    let n = m.nrows();
    let ones = DVector::from_element(n, 1.0);
    let idx = DVector::from_fn(n, |j, _| j as f64);
    let inv_ones = chol.solve(&ones);
    let inv_idx = chol.solve(&idx);
    Ok(SumTriple::new(ones.dot(&inv_ones), idx.dot(&inv_ones), idx.dot(&inv_idx)))
}

/// Closed-form inverse sums for compound symmetry.
pub fn cs_inverse_sums_closed(sigma2: f64, rho: f64, r: u32) -> Result<SumTriple> {
    check_sigma2(sigma2)?;
    let rf = f64::from(r);
    if !(rho < 1.0 && 1.0 + rf * rho > 0.0 && rho > -1.0) {
        return Err(DesignError::domain("rho", "matrix is not positive definite"));
    }
    let den = sigma2 * (1.0 + rf * rho);
    let s0 = (rf + 1.0) / den;
    let s1 = rf * (rf + 1.0) / (2.0 * den);
    let s2 = rf * (rf + 1.0) * (2.0 + rf * (4.0 + (rf - 1.0) * rho)) / (12.0 * den * (1.0 - rho));
    let det_a = rf * (rf + 1.0).powi(2) * (rf + 2.0) / (12.0 * sigma2 * den * (1.0 - rho));
    Ok(SumTriple { s0, s1, s2, det_a })
}

/// Closed-form inverse sums for AR(1), i.e. damped exponential with
/// `theta = 1`, where consecutive measures have correlation `rho^s`.
pub fn ar1_inverse_sums_closed(sigma2: f64, rho: f64, s: f64, r: u32) -> Result<SumTriple> {
    check_sigma2(sigma2)?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(DesignError::domain("rho", "AR(1) closed form requires 0 < rho < 1"));
    }
    let rf = f64::from(r);
    let q = rho.powf(s);
    let s0 = (1.0 + rf + q - rf * q) / (sigma2 * (1.0 + q));
    let s1 = rf * (1.0 - q) * (1.0 + rf * (1.0 - q) + q) / (2.0 * (1.0 - q * q) * sigma2);
    let s2 = rf / (6.0 * (1.0 - q * q) * sigma2)
        * (1.0 + 4.0 * q + q * q + 3.0 * rf * (1.0 - q * q) + 2.0 * rf * rf * (1.0 - q).powi(2));
    Ok(SumTriple::new(s0, s1, s2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cs_examples() {
        let m = build_cs(2.0, 0.5, 1).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert_eq!(build_cs(1.0, 0.0, 2).unwrap(), DMatrix::identity(3, 3));
        let m = build_cs(0.3214, 0.857, 6).unwrap();
        assert_eq!(m.nrows(), 7);
        assert_relative_eq!(m[(2, 5)], 0.3214 * 0.857, max_relative = 1e-14);
        assert!(build_cs(1.0, 1.0, 2).is_err());
        assert!(build_cs(0.0, 0.1, 2).is_err());
    }

    #[test]
    fn dex_examples() {
        let m = build_dex(1.0, 0.8, 1.0, 1.0, 2).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.8, 0.64, 0.8, 1.0, 0.8, 0.64, 0.8, 1.0]);
        assert!((m - expected).amax() < 1e-15);
        let m = build_dex(1.0, 0.5, 0.0, 3.0, 2).unwrap();
        assert!((m - build_cs(1.0, 0.5, 2).unwrap()).amax() < 1e-12);
        let m = build_dex(0.3179, 0.896, 0.18, 3.0, 1).unwrap();
        let exponent = (0.18 * 3.0_f64.ln()).exp();
        let off = 0.3179 * (exponent * 0.896_f64.ln()).exp();
        assert_relative_eq!(m[(0, 1)], off, max_relative = 1e-13);
        assert_eq!(build_dex(2.0, 0.0, 0.0, 1.0, 2).unwrap(), DMatrix::identity(3, 3) * 2.0);
    }

    #[test]
    fn rs_examples() {
        let raw = RsRawParams {
            sigma_w2: 1.0,
            sigma_b0_2: 0.0,
            sigma_b1_2: 0.0,
            sigma_b0b1: 0.0,
        };
        assert_eq!(build_rs(&raw, 0.0, 1.0, 1).unwrap(), DMatrix::identity(2, 2));
        let raw = RsRawParams {
            sigma_b0_2: 2.0,
            ..raw
        };
        let m = build_rs(&raw, 7.5, 2.0, 3).unwrap();
        assert!((m - build_cs(3.0, 2.0 / 3.0, 3).unwrap()).amax() < 1e-12);
        let raw = RsRawParams {
            sigma_w2: 0.0418,
            sigma_b0_2: 0.2982,
            sigma_b1_2: 0.000095,
            sigma_b0b1: -0.0017,
        };
        assert_relative_eq!(build_rs(&raw, 0.0, 3.0, 1).unwrap()[(0, 0)], 0.34, max_relative = 1e-12);
    }

    #[test]
    fn intuitive_conversion() {
        let p = RsIntuitiveParams {
            sigma_t0_2: 0.34,
            rho_t0: 0.877,
            rho_b0b1: -0.32,
            slope_rel: 0.0,
            r_tilde: 6,
            rel_mode: Spacing::FixedTau { tau: 18.0 },
        };
        let raw = rs_intuitive_to_raw(&p).unwrap();
        assert_eq!(raw.sigma_b1_2, 0.0);
        assert_eq!(raw.sigma_b0b1, 0.0);
        let p = RsIntuitiveParams { slope_rel: 0.364, ..p };
        let raw = rs_intuitive_to_raw(&p).unwrap();
        // Independent solve of rel = a / (b + a) for a = sigma_b1^2 tau^2 (r+1)(r+2).
        let b = 12.0 * 6.0 * (1.0 - 0.877) * 0.34;
        let a = 0.364 * b / (1.0 - 0.364);
        assert_relative_eq!(raw.sigma_b1_2, a / (18.0 * 18.0 * 7.0 * 8.0), max_relative = 1e-12);
        assert_relative_eq!(raw.sigma_b0_2 + raw.sigma_w2, 0.34, max_relative = 1e-14);
        let back = slope_reliability(&raw, p.rel_mode, 6).unwrap();
        assert_relative_eq!(back, 0.364, max_relative = 1e-12);
        let at12 = slope_reliability(&raw, p.rel_mode, 12).unwrap();
        assert!((at12 - 0.4818737).abs() < 1e-6);
        assert!(rs_intuitive_to_raw(&RsIntuitiveParams { slope_rel: 1.0, ..p }).is_err());
    }

    #[test]
    fn inverse_sum_examples() {
        let t = inverse_sums(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!((t.s0, t.s1, t.s2, t.det_a), (2.0, 1.0, 1.0, 1.0));
        let t = inverse_sums(&build_cs(1.0, 0.0, 2).unwrap()).unwrap();
        assert_relative_eq!(t.det_a, 6.0, max_relative = 1e-14);
        let t = inverse_sums(&build_cs(1.0, 0.5, 1).unwrap()).unwrap();
        assert_relative_eq!(t.s0, 4.0 / 3.0, max_relative = 1e-14);
        let c = cs_inverse_sums_closed(1.0, 0.0, 2).unwrap();
        assert_eq!((c.s0, c.s1, c.s2, c.det_a), (3.0, 3.0, 5.0, 6.0));
        let c = cs_inverse_sums_closed(0.3214, 0.857, 6).unwrap();
        assert_relative_eq!(c.s0, 7.0 / (0.3214 * (1.0 + 6.0 * 0.857)), max_relative = 1e-14);
        let a = ar1_inverse_sums_closed(1.0, 0.8, 1.0, 2).unwrap();
        assert_relative_eq!(a.s0, (3.0 + 0.8 - 1.6) / 1.8, max_relative = 1e-14);
        let g = inverse_sums(&build_dex(1.0, 0.8, 1.0, 1.0, 2).unwrap()).unwrap();
        assert_relative_eq!(a.s2, g.s2, max_relative = 1e-12);
    }

    #[test]
    fn non_pd_is_an_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(inverse_sums(&m), Err(DesignError::Decomposition(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(inverse_sums(&m).is_err());
    }
}
