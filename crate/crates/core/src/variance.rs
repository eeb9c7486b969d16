//! Asymptotic variance of the exposure-effect estimator.
//!
//! The central quantity is the unit variance `c' Σ_B c`, the variance of
//! `sqrt(N)` times the generalised least squares estimate of the effect of
//! interest, with `Σ_B = (E[X_i' Σ_i⁻¹ X_i])⁻¹`.  For CS and DEX the
//! covariance is common to all subjects and the variance follows from the
//! three inverse sums.  Under random slopes the covariance depends on the
//! subject's entry time, and when entry times vary the expectation is taken
//! by Gauss–Hermite quadrature over the two exposure-group normals.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::covariance::{
    ar1_inverse_sums_closed, build_dex, cholesky, cs_inverse_sums_closed, inverse_sums,
    CovarianceSpec, RsRawParams, Spacing, SumTriple, TimeGrid,
};
use crate::error::{DesignError, Result};
use crate::quadrature::HermiteRule;
use crate::solvers::DesignQuery;

/// Distribution of exposure and entry time in the study population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    /// Prevalence of exposure, strictly between 0 and 1.
    pub pe: f64,
    /// Variance of the time variable at baseline (e.g. age at entry).
    pub v_t0: f64,
    /// Correlation between exposure and baseline time.
    #[serde(default)]
    pub rho_e_t0: f64,
}

impl PopulationSpec {
    /// Population where everybody enters at the same time.
    pub fn new(pe: f64) -> Self {
        PopulationSpec {
            pe,
            v_t0: 0.0,
            rho_e_t0: 0.0,
        }
    }

    /// Checks the admissible ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.pe > 0.0 && self.pe < 1.0) {
            return Err(DesignError::domain("pop.pe", format!("must lie in (0, 1), got {}", self.pe)));
        }
        if !(self.v_t0.is_finite() && self.v_t0 >= 0.0) {
            return Err(DesignError::domain("pop.v_t0", "must be finite and >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.rho_e_t0) {
            return Err(DesignError::domain("pop.rho_e_t0", "must lie in [-1, 1]"));
        }
        if self.v_t0 == 0.0 && self.rho_e_t0 != 0.0 {
            return Err(DesignError::domain(
                "pop.rho_e_t0",
                "must be 0 when v_t0 = 0 (a constant entry time cannot correlate with exposure)",
            ));
        }
        Ok(())
    }

    /// `pe (1 - pe)`.
    pub fn pq(&self) -> f64 {
        self.pe * (1.0 - self.pe)
    }

    /// Mean entry time among the exposed and the unexposed, in that order.
    /// The overall mean is zero.
    pub fn group_means(&self) -> (f64, f64) {
        let sd = self.v_t0.sqrt();
        let exposed = self.rho_e_t0 * ((1.0 - self.pe) / self.pe).sqrt() * sd;
        let unexposed = -self.rho_e_t0 * (self.pe / (1.0 - self.pe)).sqrt() * sd;
        (exposed, unexposed)
    }

    /// Common within-group standard deviation of the entry time.
    pub fn within_sd(&self) -> f64 {
        (self.v_t0 * (1.0 - self.rho_e_t0 * self.rho_e_t0)).max(0.0).sqrt()
    }
}

/// Alternative hypothesis, which fixes the coefficient being tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Constant mean difference between the exposure groups.
    Cmd,
    /// Linearly divergent difference: the groups differ in their slopes.
    Ldd,
    /// Between/within model separating cross-sectional and longitudinal time
    /// effects; tests the longitudinal slope difference.
    Bw,
}

/// How a unit variance was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Closed-form inverse sums or a closed-form variance expression.
    ClosedForm,
    /// Numerical inversion of the covariance matrix.
    GenericMatrix,
    /// Gauss–Hermite quadrature over the entry-time distribution.
    Quadrature,
}

/// Unit variance `c' Σ_B c` together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVariance {
    /// Variance of `sqrt(N)` times the estimator.
    pub value: f64,
    /// Computation route.
    pub method: VarianceMethod,
}

impl UnitVariance {
    fn checked(value: f64, method: VarianceMethod) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(UnitVariance { value, method })
        } else {
            Err(DesignError::InfiniteVariance(format!("variance evaluated to {value}")))
        }
    }
}

/// Unit variance of the constant mean difference.
///
/// When entry times do not vary, or are uncorrelated with exposure, this is
/// `1 / (pe (1 - pe) s0)`.
pub fn var_cmd(sums: &SumTriple, s: f64, pop: &PopulationSpec) -> Result<UnitVariance> {
    pop.validate()?;
    let pq = pop.pq();
    if pq * sums.s0 <= 0.0 {
        return Err(DesignError::InfiniteVariance("pe (1 - pe) s0 is zero".into()));
    }
    let value = if pop.v_t0 == 0.0 || pop.rho_e_t0 == 0.0 {
        1.0 / (pq * sums.s0)
    } else {
        let within = s * s * sums.det_a;
        let s0sq = sums.s0 * sums.s0;
        let den = pq * sums.s0 * (within + s0sq * (1.0 - pop.rho_e_t0.powi(2)) * pop.v_t0);
        if den <= 0.0 {
            return Err(DesignError::InfiniteVariance(
                "entry time is collinear with exposure and there is no follow-up".into(),
            ));
        }
        (within + s0sq * pop.v_t0) / den
    };
    UnitVariance::checked(value, VarianceMethod::GenericMatrix)
}

/// Unit variance of the slope difference.
pub fn var_ldd(sums: &SumTriple, s: f64, pop: &PopulationSpec) -> Result<UnitVariance> {
    pop.validate()?;
    let den = pop.pq() * (s * s * sums.det_a + (1.0 - pop.rho_e_t0.powi(2)) * pop.v_t0 * sums.s0 * sums.s0);
    if den.is_nan() || den < 1e-300 {
        return Err(DesignError::Unidentifiable(
            "the slope difference needs at least one follow-up measure or varying entry times".into(),
        ));
    }
    UnitVariance::checked(sums.s0 / den, VarianceMethod::GenericMatrix)
}

/// Unit variance of the longitudinal slope difference in the between/within
/// model; entry-time variation does not contribute.
pub fn var_bw(sums: &SumTriple, s: f64, pop: &PopulationSpec) -> Result<UnitVariance> {
    let fixed = PopulationSpec {
        v_t0: 0.0,
        rho_e_t0: 0.0,
        ..*pop
    };
    var_ldd(sums, s, &fixed)
}

/// Tuning of the adaptive Gauss–Hermite integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Nodes per exposure group in the first pass.
    pub initial_nodes: usize,
    /// Largest node count tried.
    pub max_nodes: usize,
    /// Relative agreement required between successive refinements.
    pub rel_tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            initial_nodes: 40,
            max_nodes: 320,
            rel_tol: 1e-8,
        }
    }
}

/// `Z' Σ⁻¹ Z` for the RS covariance at entry time `t0`, where `Z` holds a
/// column of ones and the measurement times.
///
/// Uses `Σ⁻¹ = σ_w⁻² (I - Z D (σ_w² I + G D)⁻¹ Z')` with `G = Z'Z`, which
/// stays valid when `D` or `G` is singular.
pub(crate) fn rs_projected_precision(raw: &RsRawParams, t0: f64, s: f64, r: u32) -> Matrix2<f64> {
    let n = f64::from(r) + 1.0;
    let (mut st, mut stt) = (0.0, 0.0);
    for j in 0..=r {
        let t = t0 + s * f64::from(j);
        st += t;
        stt += t * t;
    }
    let g = Matrix2::new(n, st, st, stt);
    let d = Matrix2::new(raw.sigma_b0_2, raw.sigma_b0b1, raw.sigma_b0b1, raw.sigma_b1_2);
    let inner = Matrix2::identity() * raw.sigma_w2 + g * d;
    let inner_inv = inner
        .try_inverse()
        .expect("sigma_w2 > 0 keeps sigma_w2 I + G D invertible");
    let m = (g - g * d * inner_inv * g) / raw.sigma_w2;
    (m + m.transpose()) * 0.5
}

/// Expected information for the RS model at a given rule, returned as a
/// `4 x 4` (LDD) or `3 x 3` (CMD) matrix.
fn rs_expected_information(
    raw: &RsRawParams,
    s: f64,
    r: u32,
    pop: &PopulationSpec,
    hyp: Hypothesis,
    rule: &HermiteRule,
) -> DMatrix<f64> {
    let (m1, m0) = pop.group_means();
    let sd = pop.within_sd();
    let mut e1 = Matrix2::zeros();
    let mut e0 = Matrix2::zeros();
    for (t0, w) in rule.normal_points(m1, sd) {
        e1 += rs_projected_precision(raw, t0, s, r) * w;
    }
    for (t0, w) in rule.normal_points(m0, sd) {
        e0 += rs_projected_precision(raw, t0, s, r) * w;
    }
    let em = e0 * (1.0 - pop.pe) + e1 * pop.pe;
    let ekm = e1 * pop.pe;
    match hyp {
        Hypothesis::Cmd => DMatrix::from_row_slice(
            3,
            3,
            &[
                em[(0, 0)], em[(0, 1)], ekm[(0, 0)],
                em[(1, 0)], em[(1, 1)], ekm[(1, 0)],
                ekm[(0, 0)], ekm[(0, 1)], ekm[(0, 0)],
            ],
        ),
        Hypothesis::Ldd | Hypothesis::Bw => DMatrix::from_row_slice(
            4,
            4,
            &[
                em[(0, 0)], em[(0, 1)], ekm[(0, 0)], ekm[(0, 1)],
                em[(1, 0)], em[(1, 1)], ekm[(1, 0)], ekm[(1, 1)],
                ekm[(0, 0)], ekm[(0, 1)], ekm[(0, 0)], ekm[(0, 1)],
                ekm[(1, 0)], ekm[(1, 1)], ekm[(1, 0)], ekm[(1, 1)],
            ],
        ),
    }
}

/// Last diagonal entry of the inverse of a positive definite matrix.
pub(crate) fn last_inverse_diagonal(info: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(info).map_err(|_| {
        DesignError::Unidentifiable("expected information matrix is singular".into())
    })?;
    let n = info.nrows();
    let mut e = nalgebra::DVector::zeros(n);
    e[n - 1] = 1.0;
    Ok(chol.solve(&e)[n - 1])
}

/// RS unit variance when entry times vary, by quadrature over the normal
/// entry-time distribution of each exposure group.
///
/// The node count starts at `opts.initial_nodes` and doubles until two
/// successive results agree to `opts.rel_tol`.
pub fn var_rs_numeric(
    raw: &RsRawParams,
    grid: &TimeGrid,
    pop: &PopulationSpec,
    hyp: Hypothesis,
    opts: &QuadratureOptions,
) -> Result<UnitVariance> {
    raw.validate()?;
    pop.validate()?;
    grid.validate()?;
    if hyp != Hypothesis::Cmd && grid.r == 0 {
        return Err(DesignError::Unidentifiable("slope difference requires r >= 1".into()));
    }
    let s = if grid.r == 0 { 1.0 } else { grid.spacing()? };
    let eval = |n: usize| -> Result<f64> {
        let rule = HermiteRule::cached(n);
        last_inverse_diagonal(&rs_expected_information(raw, s, grid.r, pop, hyp, &rule))
    };
    let mut nodes = opts.initial_nodes.max(1);
    let mut prev = eval(nodes)?;
    if nodes * 2 > opts.max_nodes {
        // No refinement allowed: the single estimate is returned unchecked.
        return UnitVariance::checked(prev, VarianceMethod::Quadrature);
    }
    let mut change = f64::INFINITY;
    while nodes * 2 <= opts.max_nodes {
        nodes *= 2;
        let next = eval(nodes)?;
        change = ((next - prev) / next).abs();
        if change <= opts.rel_tol {
            return UnitVariance::checked(next, VarianceMethod::Quadrature);
        }
        prev = next;
    }
    Err(DesignError::Quadrature { nodes, achieved: change })
}

/// Closed-form RS unit variance for a common entry time (set to zero).
fn var_rs_fixed_entry(raw: &RsRawParams, s: f64, r: u32, pop: &PopulationSpec, hyp: Hypothesis) -> Result<f64> {
    let pq = pop.pq();
    let rf = f64::from(r);
    match hyp {
        Hypothesis::Cmd => {
            if r == 0 {
                return Ok((raw.sigma_w2 + raw.sigma_b0_2) / pq);
            }
            let c = rf * (rf + 1.0) * (rf + 2.0);
            let b = raw.sigma_b1_2 + 12.0 * raw.sigma_w2 / (c * s * s);
            let a = raw.sigma_b0_2 + 2.0 * (2.0 * rf + 1.0) * raw.sigma_w2 / ((rf + 1.0) * (rf + 2.0));
            let cross = raw.sigma_b0b1 - 6.0 * raw.sigma_w2 / ((rf + 1.0) * (rf + 2.0) * s);
            Ok((a * b - cross * cross) / (pq * b))
        }
        Hypothesis::Ldd | Hypothesis::Bw => {
            if r == 0 {
                return Err(DesignError::Unidentifiable("slope difference requires r >= 1".into()));
            }
            let c = rf * (rf + 1.0) * (rf + 2.0);
            Ok((12.0 * raw.sigma_w2 / (s * s * c) + raw.sigma_b1_2) / pq)
        }
    }
}

/// Applies the hypothesis-specific formula to a set of inverse sums.
pub fn var_from_sums(sums: &SumTriple, s: f64, pop: &PopulationSpec, hyp: Hypothesis) -> Result<UnitVariance> {
    match hyp {
        Hypothesis::Cmd => var_cmd(sums, s, pop),
        Hypothesis::Ldd => var_ldd(sums, s, pop),
        Hypothesis::Bw => var_bw(sums, s, pop),
    }
}

/// Inverse sums for a CS or DEX model, preferring closed forms.
fn sums_for(cov: &CovarianceSpec, s: f64, r: u32) -> Result<(SumTriple, VarianceMethod)> {
    match *cov {
        CovarianceSpec::Cs { sigma2, rho } => Ok((cs_inverse_sums_closed(sigma2, rho, r)?, VarianceMethod::ClosedForm)),
        CovarianceSpec::Dex { sigma2, rho, theta } => {
            if theta == 0.0 || rho == 0.0 {
                let rho_cs = if theta == 0.0 { rho } else { 0.0 };
                Ok((cs_inverse_sums_closed(sigma2, rho_cs, r)?, VarianceMethod::ClosedForm))
            } else if theta == 1.0 {
                Ok((ar1_inverse_sums_closed(sigma2, rho, s, r)?, VarianceMethod::ClosedForm))
            } else {
                Ok((inverse_sums(&build_dex(sigma2, rho, theta, s, r)?)?, VarianceMethod::GenericMatrix))
            }
        }
        CovarianceSpec::Rs { .. } => unreachable!("RS is routed separately"),
    }
}

/// Unit variance for a full design query, choosing the most direct route:
/// closed forms for CS, AR(1) and RS with a common entry time; numerical
/// inversion for general DEX; quadrature for RS with varying entry times.
pub fn unit_variance(query: &DesignQuery) -> Result<UnitVariance> {
    unit_variance_with(query, &QuadratureOptions::default())
}

/// [`unit_variance`] with explicit quadrature settings.
pub fn unit_variance_with(query: &DesignQuery, opts: &QuadratureOptions) -> Result<UnitVariance> {
    query.validate_design()?;
    let grid = &query.grid;
    let r = grid.r;
    let s = if r == 0 { 1.0 } else { grid.spacing()? };
    match query.cov {
        CovarianceSpec::Rs { params } => {
            let raw = params.to_raw()?;
            if query.pop.v_t0 == 0.0 || query.hyp == Hypothesis::Bw {
                let v = var_rs_fixed_entry(&raw, s, r, &query.pop, query.hyp)?;
                UnitVariance::checked(v, VarianceMethod::ClosedForm)
            } else {
                var_rs_numeric(&raw, grid, &query.pop, query.hyp, opts)
            }
        }
        ref cov => {
            let (sums, method) = sums_for(cov, s, r)?;
            let v = var_from_sums(&sums, s, &query.pop, query.hyp)?;
            Ok(UnitVariance { value: v.value, method })
        }
    }
}

/// Limit of the unit variance as the number of follow-up measures grows
/// without bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitVariance {
    /// The variance vanishes, so any power is reachable with enough measures.
    Zero,
    /// The variance tends to this positive value.
    Finite(f64),
    /// No closed-form limit is available for this combination.
    Unavailable(String),
}

/// Limit of the unit variance as `r → ∞` under the spacing rule `mode`.
///
/// Closed forms exist for CS, AR(1) and RS; DEX with `0 < theta < 1` and most
/// settings with varying entry times have none.
pub fn var_limit_r_inf(
    spec: &CovarianceSpec,
    hyp: Hypothesis,
    mode: Spacing,
    pop: &PopulationSpec,
) -> Result<LimitVariance> {
    pop.validate()?;
    spec.validate_for_design()?;
    let pq = pop.pq();
    let varying = pop.v_t0 > 0.0;
    let hyp = if hyp == Hypothesis::Bw { Hypothesis::Ldd } else { hyp };
    let finite = |v: f64| if v <= 0.0 { LimitVariance::Zero } else { LimitVariance::Finite(v) };
    // For CS and DEX the CMD variance ignores entry times uncorrelated with
    // exposure, and the LDD variance only shrinks as entry times spread.
    let cmd_unaffected = !varying || pop.rho_e_t0 == 0.0;
    let unavailable = || {
        LimitVariance::Unavailable("no closed-form limit when entry times vary for this model".into())
    };
    let limit = match (*spec, hyp) {
        (CovarianceSpec::Dex { sigma2, rho, theta: 0.0 }, h) => {
            return var_limit_r_inf(&CovarianceSpec::Cs { sigma2, rho }, h, mode, pop);
        }
        (CovarianceSpec::Cs { sigma2, rho }, Hypothesis::Cmd) => {
            if cmd_unaffected {
                finite(sigma2 * rho / pq)
            } else {
                unavailable()
            }
        }
        (CovarianceSpec::Cs { .. }, _) => LimitVariance::Zero,
        (CovarianceSpec::Dex { sigma2, rho, theta: 1.0 }, h) => {
            if rho == 0.0 {
                LimitVariance::Zero
            } else {
                match (mode, h) {
                    (Spacing::FixedS { .. }, Hypothesis::Cmd) if cmd_unaffected => LimitVariance::Zero,
                    (Spacing::FixedS { .. }, Hypothesis::Cmd) => unavailable(),
                    (Spacing::FixedS { .. }, _) => LimitVariance::Zero,
                    (Spacing::FixedTau { tau }, Hypothesis::Cmd) if cmd_unaffected => {
                        finite(2.0 * sigma2 / (pq * (2.0 - tau * rho.ln())))
                    }
                    (Spacing::FixedTau { tau }, Hypothesis::Ldd) if !varying => {
                        let l = rho.ln();
                        finite(24.0 * sigma2 * l / (pq * (-12.0 * tau + 6.0 * tau * tau * l - tau.powi(3) * l * l)))
                    }
                    _ => unavailable(),
                }
            }
        }
        (CovarianceSpec::Dex { .. }, _) => LimitVariance::Unavailable(
            "no closed-form limit for damped exponential with 0 < theta < 1".into(),
        ),
        (CovarianceSpec::Rs { params }, h) => {
            if varying {
                unavailable()
            } else {
                let raw = params.to_raw()?;
                match h {
                    Hypothesis::Cmd => {
                        if raw.sigma_b1_2 > 0.0 {
                            finite((raw.sigma_b0_2 * raw.sigma_b1_2 - raw.sigma_b0b1.powi(2)) / (pq * raw.sigma_b1_2))
                        } else {
                            finite(raw.sigma_b0_2 / pq)
                        }
                    }
                    _ => finite(raw.sigma_b1_2 / pq),
                }
            }
        }
    };
    Ok(limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_cs, build_rs};
    use approx::assert_relative_eq;

    fn pop(pe: f64, v: f64, rho: f64) -> PopulationSpec {
        PopulationSpec { pe, v_t0: v, rho_e_t0: rho }
    }

    #[test]
    fn cmd_examples() {
        let sums = inverse_sums(&build_cs(1.0, 0.0, 0).unwrap()).unwrap();
        assert_relative_eq!(var_cmd(&sums, 1.0, &pop(0.5, 0.0, 0.0)).unwrap().value, 4.0, max_relative = 1e-14);
        let sums = inverse_sums(&build_cs(0.3214, 0.857, 6).unwrap()).unwrap();
        let v = var_cmd(&sums, 3.0, &pop(0.79, 0.0, 0.0)).unwrap().value;
        let table = 0.3214 * (1.0 + 6.0 * 0.857) / (0.79 * 0.21 * 7.0);
        assert_relative_eq!(v, table, max_relative = 1e-12);
        assert_relative_eq!(v, 1.6999, max_relative = 1e-3);
        let v20 = var_cmd(&sums, 3.0, &pop(0.79, 20.0, 0.0)).unwrap().value;
        assert_eq!(v, v20);
    }

    #[test]
    fn ldd_examples() {
        let (s2, rho, r, s, pe) = (0.3214, 0.857, 6.0, 3.0, 0.79);
        let sums = inverse_sums(&build_cs(s2, rho, 6).unwrap()).unwrap();
        let v0 = var_ldd(&sums, s, &pop(pe, 0.0, 0.0)).unwrap().value;
        let table = 12.0 * s2 * (1.0 - rho) / (pe * (1.0 - pe) * s * s * r * (r + 1.0) * (r + 2.0));
        assert_relative_eq!(v0, table, max_relative = 1e-12);
        assert_relative_eq!(v0, 1.0994e-3, max_relative = 1e-3);
        let v100 = var_ldd(&sums, s, &pop(pe, 100.0, 0.0)).unwrap().value;
        let closed = 12.0 * s2 * (1.0 - rho) * (1.0 + r * rho)
            / (pe * (1.0 - pe) * (r + 1.0) * (r * (r + 2.0) * (1.0 + r * rho) * s * s + 12.0 * (1.0 - rho) * 100.0));
        assert_relative_eq!(v100, closed, max_relative = 1e-12);
        assert_relative_eq!(v100, 1.0326e-3, max_relative = 1e-3);
        for rho_e in [-1.0, 1.0] {
            let v = var_ldd(&sums, s, &pop(pe, 100.0, rho_e)).unwrap().value;
            assert_relative_eq!(v, v0, max_relative = 1e-12);
        }
        let bw = var_bw(&sums, s, &pop(pe, 100.0, 0.3)).unwrap().value;
        assert_relative_eq!(bw, v0, max_relative = 1e-14);
    }

    #[test]
    fn bw_at_r1_matches_two_point_formula() {
        // Two measurements tau apart: slope variance 2 sigma2 (1 - rho) / tau^2.
        let (s2, rho, tau, pe) = (1.7, 0.4, 5.0, 0.3);
        let sums = inverse_sums(&build_cs(s2, rho, 1).unwrap()).unwrap();
        let v = var_bw(&sums, tau, &pop(pe, 0.0, 0.0)).unwrap().value;
        assert_relative_eq!(v, 2.0 * s2 * (1.0 - rho) / (tau * tau * pe * (1.0 - pe)), max_relative = 1e-12);
    }

    #[test]
    fn ldd_without_followup_is_unidentifiable() {
        let sums = inverse_sums(&build_cs(1.0, 0.2, 0).unwrap()).unwrap();
        assert!(var_ldd(&sums, 1.0, &pop(0.5, 0.0, 0.0)).is_err());
        assert!(var_cmd(&sums, 1.0, &pop(0.5, 4.0, 1.0)).is_err());
    }

    #[test]
    fn projected_precision_matches_direct_inverse() {
        let raw = RsRawParams { sigma_w2: 0.3, sigma_b0_2: 1.1, sigma_b1_2: 0.05, sigma_b0b1: -0.1 };
        for (t0, s, r) in [(0.0, 1.0, 3), (-4.2, 2.5, 5), (7.0, 0.5, 0)] {
            let sigma = build_rs(&raw, t0, s, r).unwrap();
            let z = crate::covariance::rs_z_matrix(t0, s, r);
            let direct = z.transpose() * sigma.try_inverse().unwrap() * &z;
            let fast = rs_projected_precision(&raw, t0, s, r);
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(direct[(i, j)], fast[(i, j)], max_relative = 1e-9, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn rs_numeric_tends_to_fixed_entry_value() {
        let raw = RsRawParams { sigma_w2: 0.0418, sigma_b0_2: 0.2982, sigma_b1_2: 0.000095, sigma_b0b1: -0.0017 };
        let grid = TimeGrid::fixed_s(6, 3.0);
        for hyp in [Hypothesis::Cmd, Hypothesis::Ldd] {
            let closed = var_rs_fixed_entry(&raw, 3.0, 6, &pop(0.79, 0.0, 0.0), hyp).unwrap();
            let tiny = var_rs_numeric(&raw, &grid, &pop(0.79, 1e-10, 0.0), hyp, &QuadratureOptions::default())
                .unwrap()
                .value;
            assert_relative_eq!(tiny, closed, max_relative = 1e-7);
        }
    }

    #[test]
    fn rs_closed_forms_match_generic_sums() {
        let raw = RsRawParams { sigma_w2: 0.5, sigma_b0_2: 1.0, sigma_b1_2: 0.02, sigma_b0b1: 0.05 };
        let p = pop(0.4, 0.0, 0.0);
        for r in 0..8u32 {
            let s = 1.5;
            let sums = inverse_sums(&build_rs(&raw, 0.0, s, r).unwrap()).unwrap();
            let cmd = var_cmd(&sums, s, &p).unwrap().value;
            assert_relative_eq!(var_rs_fixed_entry(&raw, s, r, &p, Hypothesis::Cmd).unwrap(), cmd, max_relative = 1e-9);
            if r > 0 {
                let ldd = var_ldd(&sums, s, &p).unwrap().value;
                assert_relative_eq!(var_rs_fixed_entry(&raw, s, r, &p, Hypothesis::Ldd).unwrap(), ldd, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn rs_with_zero_slope_matches_cs_generic_path() {
        let raw = RsRawParams { sigma_w2: 0.4, sigma_b0_2: 0.6, sigma_b1_2: 0.0, sigma_b0b1: 0.0 };
        let grid = TimeGrid::fixed_s(4, 2.0);
        let sums = inverse_sums(&build_cs(1.0, 0.6, 4).unwrap()).unwrap();
        for (hyp, rho_e) in [(Hypothesis::Ldd, 0.0), (Hypothesis::Ldd, 0.5), (Hypothesis::Cmd, 0.5), (Hypothesis::Cmd, 0.0)] {
            let p = pop(0.3, 25.0, rho_e);
            let num = var_rs_numeric(&raw, &grid, &p, hyp, &QuadratureOptions::default()).unwrap().value;
            let gen = var_from_sums(&sums, 2.0, &p, hyp).unwrap().value;
            assert_relative_eq!(num, gen, max_relative = 1e-9);
        }
    }

    #[test]
    fn limits_simple_cases() {
        let cs = CovarianceSpec::Cs { sigma2: 1.0, rho: 0.5 };
        let p = pop(0.5, 0.0, 0.0);
        assert_eq!(
            var_limit_r_inf(&cs, Hypothesis::Cmd, Spacing::FixedS { s: 1.0 }, &p).unwrap(),
            LimitVariance::Finite(2.0)
        );
        assert_eq!(
            var_limit_r_inf(&cs, Hypothesis::Ldd, Spacing::FixedS { s: 1.0 }, &p).unwrap(),
            LimitVariance::Zero
        );
        let dex = CovarianceSpec::Dex { sigma2: 1.0, rho: 0.5, theta: 0.5 };
        assert!(matches!(
            var_limit_r_inf(&dex, Hypothesis::Cmd, Spacing::FixedS { s: 1.0 }, &p).unwrap(),
            LimitVariance::Unavailable(_)
        ));
    }
}
