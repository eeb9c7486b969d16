//! Independent checks of the variance engine.
//!
//! Two kinds of evidence live here.  Simulation draws participants and
//! responses from the assumed model and measures what the formulas predict:
//! the expected information matrix and the rejection rate of the Wald test.
//! Algebraic checks build matrices directly and confirm estimator
//! equivalences and identities that the closed forms rely on.
//!
//! Every replicate owns a ChaCha8 stream selected by its index, so results
//! depend only on the seed and not on thread scheduling.  Replicates are
//! summed in fixed-size chunks whose partial sums are combined in index
//! order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    ar1_inverse_sums_closed, build_cs, build_dex, cholesky, cs_inverse_sums_closed, inverse_sums, CovarianceSpec,
    RsRawParams, TimeGrid,
};
use crate::error::{DesignError, Result};
use crate::quadrature::HermiteRule;
use crate::solvers::{required_n, z_quantile, DesignQuery, EffectSpec};
use crate::variance::{
    unit_variance, unit_variance_with, var_bw, Hypothesis, PopulationSpec, QuadratureOptions,
};

/// Replicates per chunk in deterministic parallel sums.
const CHUNK: u64 = 1024;

/// Settings shared by the simulation routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of Monte Carlo replicates, at least one.
    pub replicates: u64,
    /// Seed from which every replicate stream is derived.
    pub seed: u64,
    /// Quadrature settings for the analytic values compared against.
    #[serde(default)]
    pub quadrature: QuadratureOptions,
}

impl SimConfig {
    /// Configuration with default quadrature settings.
    pub fn new(replicates: u64, seed: u64) -> Self {
        SimConfig {
            replicates,
            seed,
            quadrature: QuadratureOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(DesignError::domain("replicates", "must be >= 1"));
        }
        Ok(())
    }
}

/// Generator for replicate `index`: the seed picks the key and the index
/// picks the stream.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Column layout of one participant's design matrix.
#[derive(Debug, Clone, Copy)]
struct Layout {
    hyp: Hypothesis,
    s: f64,
    m: usize,
    time_col: bool,
}

impl Layout {
    fn new(query: &DesignQuery) -> Result<Self> {
        let r = query.grid.r;
        let s = if r == 0 { 1.0 } else { query.grid.spacing()? };
        Ok(Layout {
            hyp: query.hyp,
            s,
            m: r as usize + 1,
            // With one visit and a common entry time the time column is
            // identically zero and carries no information.
            time_col: r > 0 || query.pop.v_t0 > 0.0,
        })
    }

    /// Number of fixed effects; the tested coefficient is always last.
    fn p(&self) -> usize {
        match self.hyp {
            Hypothesis::Cmd => 2 + usize::from(self.time_col),
            Hypothesis::Ldd => 4,
            Hypothesis::Bw => 5,
        }
    }

    /// Writes the `m x p` design matrix row-major into `out`.
    fn fill(&self, exposed: bool, t0: f64, out: &mut [f64]) {
        let k = if exposed { 1.0 } else { 0.0 };
        let p = self.p();
        for j in 0..self.m {
            let within = self.s * j as f64;
            let t = t0 + within;
            let row = &mut out[j * p..(j + 1) * p];
            match self.hyp {
                Hypothesis::Cmd if self.time_col => row.copy_from_slice(&[1.0, t, k]),
                Hypothesis::Cmd => row.copy_from_slice(&[1.0, k]),
                Hypothesis::Ldd => row.copy_from_slice(&[1.0, t, k, k * t]),
                Hypothesis::Bw => row.copy_from_slice(&[1.0, t0, within, k, k * within]),
            }
        }
    }
}

/// Lower Cholesky factor of the covariance matrix, row-major.
fn factor(cov: &CovarianceSpec, t0: f64, layout: &Layout, r: u32) -> Result<Vec<f64>> {
    let sigma = cov.matrix(t0, layout.s, r)?;
    let l = cholesky(&sigma)?.l();
    let m = layout.m;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            out[i * m + j] = l[(i, j)];
        }
    }
    Ok(out)
}

/// Overwrites the `m x cols` row-major block `x` with `L⁻¹ x`.
fn forward_solve(l: &[f64], m: usize, x: &mut [f64], cols: usize) {
    for i in 0..m {
        for c in 0..cols {
            let mut v = x[i * cols + c];
            for j in 0..i {
                v -= l[i * m + j] * x[j * cols + c];
            }
            x[i * cols + c] = v / l[i * m + i];
        }
    }
}

/// Source of each participant's covariance factor.
enum Factor {
    Shared(Vec<f64>),
    PerParticipant,
}

struct Model {
    layout: Layout,
    cov: CovarianceSpec,
    pop: PopulationSpec,
    r: u32,
    factor: Factor,
}

impl Model {
    fn new(query: &DesignQuery) -> Result<Self> {
        query.validate_design()?;
        let layout = Layout::new(query)?;
        let r = query.grid.r;
        // Under the between/within model time is measured from entry, so the
        // random-effects covariance does not depend on the entry time.
        let shared = query.cov.is_time_invariant() || query.hyp == Hypothesis::Bw || query.pop.v_t0 == 0.0;
        let factor = if shared {
            Factor::Shared(factor(&query.cov, 0.0, &layout, r)?)
        } else {
            Factor::PerParticipant
        };
        Ok(Model {
            layout,
            cov: query.cov,
            pop: query.pop,
            r,
            factor,
        })
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R) -> (bool, f64) {
        let exposed = rng.random::<f64>() < self.pop.pe;
        let (m1, m0) = self.pop.group_means();
        let sd = self.pop.within_sd();
        let mean = if exposed { m1 } else { m0 };
        let t0 = if sd > 0.0 {
            mean + sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            mean
        };
        (exposed, t0)
    }

    /// Whitened design `L⁻¹ X` for one participant, written into `x`.
    fn whitened(&self, exposed: bool, t0: f64, x: &mut [f64], own: &mut Vec<f64>) -> Result<()> {
        self.layout.fill(exposed, t0, x);
        let l = match &self.factor {
            Factor::Shared(l) => l.as_slice(),
            Factor::PerParticipant => {
                *own = factor(&self.cov, t0, &self.layout, self.r)?;
                own.as_slice()
            }
        };
        forward_solve(l, self.layout.m, x, self.layout.p());
        Ok(())
    }
}

/// Adds `x' x` (upper triangle) for an `m x p` block to `acc`.
fn add_gram(x: &[f64], m: usize, p: usize, acc: &mut [f64]) {
    for a in 0..p {
        for b in a..p {
            let mut v = 0.0;
            for j in 0..m {
                v += x[j * p + a] * x[j * p + b];
            }
            acc[a * p + b] += v;
        }
    }
}

fn symmetrise(acc: &mut [f64], p: usize) {
    for a in 0..p {
        for b in 0..a {
            acc[a * p + b] = acc[b * p + a];
        }
    }
}

/// Monte Carlo estimate of the per-participant information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct McInformation {
    /// Mean of `X' Σ⁻¹ X` over simulated participants.
    pub mean: DMatrix<f64>,
    /// Monte Carlo standard error of each entry of `mean`.
    pub se: DMatrix<f64>,
    /// Last diagonal entry of the inverse of `mean`.
    pub unit_variance: f64,
    /// Delta-method standard error of `unit_variance`.
    pub unit_variance_se: f64,
    /// Number of simulated participants.
    pub replicates: u64,
}

/// Sums `f(i)` over `0..n` in fixed chunks, combining partial sums in order.
fn chunked_sum<F>(n: u64, width: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(i, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; width];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part?) {
            *t += v;
        }
    }
    Ok(total)
}

/// Averages `X_i' Σ_i⁻¹ X_i` over simulated participants: exposure is
/// Bernoulli and the entry time is normal within each exposure group.
///
/// The design columns are intercept, time, exposure and, for slope
/// hypotheses, exposure by time; the tested coefficient is last.
pub fn mc_information(query: &DesignQuery, cfg: &SimConfig) -> Result<McInformation> {
    cfg.validate()?;
    let model = Model::new(query)?;
    let (m, p) = (model.layout.m, model.layout.p());
    let n = cfg.replicates;
    let info_of = |i: u64, x: &mut [f64], own: &mut Vec<f64>, gram: &mut [f64]| -> Result<()> {
        let mut rng = replicate_rng(cfg.seed, i);
        let (exposed, t0) = model.draw_covariates(&mut rng);
        model.whitened(exposed, t0, x, own)?;
        gram.iter_mut().for_each(|g| *g = 0.0);
        add_gram(x, m, p, gram);
        symmetrise(gram, p);
        Ok(())
    };

    let sums = chunked_sum(n, 2 * p * p, |i, acc| {
        let (mut x, mut own, mut gram) = (vec![0.0; m * p], Vec::new(), vec![0.0; p * p]);
        info_of(i, &mut x, &mut own, &mut gram)?;
        for (k, g) in gram.iter().enumerate() {
            acc[k] += g;
            acc[p * p + k] += g * g;
        }
        Ok(())
    })?;
    let nf = n as f64;
    let mean = DMatrix::from_row_slice(p, p, &sums[..p * p]) / nf;
    let se = DMatrix::from_fn(p, p, |a, b| {
        let mu = mean[(a, b)];
        let var = (sums[p * p + a * p + b] / nf - mu * mu).max(0.0) * nf / (nf - 1.0).max(1.0);
        (var / nf).sqrt()
    });

    let chol = cholesky(&mean).map_err(|_| DesignError::Unidentifiable("simulated information is singular".into()))?;
    let mut e = DVector::zeros(p);
    e[p - 1] = 1.0;
    let a = chol.solve(&e);
    let a_vec: Vec<f64> = a.iter().copied().collect();
    let moments = chunked_sum(n, 2, |i, acc| {
        let (mut x, mut own, mut gram) = (vec![0.0; m * p], Vec::new(), vec![0.0; p * p]);
        info_of(i, &mut x, &mut own, &mut gram)?;
        let mut g = 0.0;
        for u in 0..p {
            for v in 0..p {
                g += a_vec[u] * gram[u * p + v] * a_vec[v];
            }
        }
        acc[0] += g;
        acc[1] += g * g;
        Ok(())
    })?;
    let g_mean = moments[0] / nf;
    let g_var = (moments[1] / nf - g_mean * g_mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    Ok(McInformation {
        mean,
        se,
        unit_variance: a[p - 1],
        unit_variance_se: (g_var / nf).sqrt(),
        replicates: n,
    })
}

/// Expected information `E[X' Σ⁻¹ X]` by Gauss–Hermite integration over the
/// entry time within each exposure group, using the same design layout as
/// [`mc_information`].
///
/// Every entry is a polynomial of degree two in the entry time when the
/// covariance does not depend on it, so three nodes are exact in that case.
pub fn expected_information(query: &DesignQuery, nodes: usize) -> Result<DMatrix<f64>> {
    let model = Model::new(query)?;
    let (m, p) = (model.layout.m, model.layout.p());
    let nodes = if matches!(model.factor, Factor::Shared(_)) { 3 } else { nodes.max(1) };
    let rule = HermiteRule::cached(nodes);
    let (m1, m0) = model.pop.group_means();
    let sd = model.pop.within_sd();
    let mut acc = vec![0.0; p * p];
    let (mut x, mut own, mut gram) = (vec![0.0; m * p], Vec::new(), vec![0.0; p * p]);
    for (exposed, weight, mean) in [(true, model.pop.pe, m1), (false, 1.0 - model.pop.pe, m0)] {
        for (t0, w) in rule.normal_points(mean, sd) {
            model.whitened(exposed, t0, &mut x, &mut own)?;
            gram.iter_mut().for_each(|g| *g = 0.0);
            add_gram(&x, m, p, &mut gram);
            symmetrise(&mut gram, p);
            for (a, g) in acc.iter_mut().zip(&gram) {
                *a += weight * w * g;
            }
        }
    }
    Ok(DMatrix::from_row_slice(p, p, &acc))
}

/// Empirical power of the known-covariance Wald test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerEstimate {
    /// Fraction of replicates rejecting the null hypothesis.
    pub rejection_rate: f64,
    /// Lower end of the 95% Wilson interval.
    pub ci_low: f64,
    /// Upper end of the 95% Wilson interval.
    pub ci_high: f64,
    /// Number of rejections.
    pub rejections: u64,
    /// Number of simulated studies.
    pub replicates: u64,
    /// Covariate draws discarded because every participant fell in one
    /// exposure group.
    pub redraws: u64,
    /// Power predicted by the variance engine for the same design.
    pub analytic: f64,
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Simulates `replicates` studies of `n` participants under the
/// alternative, fits each by generalised least squares with the true
/// covariance, and counts Wald rejections at level `alpha`.
///
/// ```
/// use longidesign::oracle::{simulate_power, SimConfig};
/// use longidesign::prelude::*;
/// let q = DesignQuery {
///     grid: TimeGrid::fixed_s(1, 1.0),
///     pop: PopulationSpec::new(0.5),
///     cov: CovarianceSpec::Cs { sigma2: 1.0, rho: 0.5 },
///     hyp: Hypothesis::Cmd,
///     effect: EffectSpec::Absolute { beta: 0.0 },
///     alpha: 0.05,
/// };
/// let est = simulate_power(&q, 50, &SimConfig::new(400, 7)).unwrap();
/// assert!(est.ci_low <= 0.05 && 0.05 <= est.ci_high);
/// ```
pub fn simulate_power(query: &DesignQuery, n: u64, cfg: &SimConfig) -> Result<PowerEstimate> {
    cfg.validate()?;
    if n < 2 {
        return Err(DesignError::domain("n", "at least two participants are needed"));
    }
    let model = Model::new(query)?;
    let (m, p) = (model.layout.m, model.layout.p());
    let coef = query.coefficient()?;
    let z_crit = z_quantile(1.0 - query.alpha / 2.0);
    let nu = n as usize;

    let outcomes = chunked_sum(cfg.replicates, 2, |i, acc| {
        let mut rng = replicate_rng(cfg.seed, i);
        let mut covariates = Vec::with_capacity(nu);
        let mut redraws = 0u64;
        loop {
            covariates.clear();
            covariates.extend((0..nu).map(|_| model.draw_covariates(&mut rng)));
            let exposed = covariates.iter().filter(|c| c.0).count();
            if exposed > 0 && exposed < nu {
                break;
            }
            redraws += 1;
        }
        let mut gram = vec![0.0; p * p];
        let mut score = vec![0.0; p];
        let (mut x, mut own) = (vec![0.0; m * p], Vec::new());
        for &(exposed, t0) in &covariates {
            model.whitened(exposed, t0, &mut x, &mut own)?;
            add_gram(&x, m, p, &mut gram);
            for j in 0..m {
                let row = &x[j * p..(j + 1) * p];
                let y = row[p - 1] * coef + rng.sample::<f64, _>(StandardNormal);
                for (s, xv) in score.iter_mut().zip(row) {
                    *s += xv * y;
                }
            }
        }
        symmetrise(&mut gram, p);
        let a = DMatrix::from_row_slice(p, p, &gram);
        let chol = cholesky(&a).map_err(|_| DesignError::Unidentifiable("simulated design is singular".into()))?;
        let beta = chol.solve(&DVector::from_vec(score));
        let mut e = DVector::zeros(p);
        e[p - 1] = 1.0;
        let var = chol.solve(&e)[p - 1];
        if (beta[p - 1] / var.sqrt()).abs() > z_crit {
            acc[0] += 1.0;
        }
        acc[1] += redraws as f64;
        Ok(())
    })?;
    let rejections = outcomes[0] as u64;
    let (ci_low, ci_high) = wilson_interval(rejections, cfg.replicates, z_quantile(0.975));
    let analytic = crate::solvers::power_from_variance(
        n as f64,
        coef,
        unit_variance_with(query, &cfg.quadrature)?.value,
        query.alpha,
    );
    Ok(PowerEstimate {
        rejection_rate: rejections as f64 / cfg.replicates as f64,
        ci_low,
        ci_high,
        rejections,
        replicates: cfg.replicates,
        redraws: outcomes[1] as u64,
        analytic,
    })
}

/// Ratio of the noncentrality of the GLS slope test to that of ANCOVA under
/// compound symmetry, `(r + 1) / (r (1 - rho))`.
///
/// ```
/// use longidesign::oracle::ancova_ncp_ratio;
/// assert_eq!(ancova_ncp_ratio(1, 0.0).unwrap(), 2.0);
/// ```
pub fn ancova_ncp_ratio(r: u32, rho: f64) -> Result<f64> {
    if r == 0 {
        return Err(DesignError::domain("r", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(DesignError::domain("rho", "must lie in [0, 1)"));
    }
    let rf = f64::from(r);
    Ok((rf + 1.0) / (rf * (1.0 - rho)))
}

/// Summary-measure tests of a slope difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Follow-up mean adjusted for baseline.
    Ancova,
    /// Slope adjusted for baseline, computed from follow-up visits.
    Slanc,
    /// Slope adjusted for baseline, computed from all visits.
    Slain,
}

/// Weights `c` defining the summary measure `c' Y_i` of each statistic
/// under compound symmetry with correlation `rho`.
pub fn contrast_vector(stat: Statistic, r: u32, rho: f64) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(DesignError::domain("r", "must be >= 1"));
    }
    let rf = f64::from(r);
    Ok(match stat {
        Statistic::Ancova => std::iter::once(-rho).chain((0..r).map(|_| 1.0 / rf)).collect(),
        Statistic::Slanc => {
            let k = 6.0 / (rf * (rf + 1.0) * (rf + 2.0));
            std::iter::once(-rho * k)
                .chain((1..=r).map(|j| k * (2.0 * f64::from(j) - rf)))
                .collect()
        }
        Statistic::Slain => {
            let den = rf * (rf + 1.0) * (rho * rf * (rf - 1.0) + 2.0 * (2.0 * rf + 1.0));
            (0..=r)
                .map(|j| {
                    let jf = f64::from(j);
                    (12.0 * jf + 6.0 * rho * rf * (2.0 * jf - rf - 1.0)) / den
                })
                .collect()
        }
    })
}

/// Expected numerator `c' (mu_1 - mu_0)` of a summary-measure test when the
/// slopes are equal but baseline means differ by `p1 mu00`.
pub fn summary_bias_h0(stat: Statistic, r: u32, rho: f64, p1: f64, mu00: f64) -> Result<f64> {
    if r == 0 {
        return Err(DesignError::domain("r", "must be >= 1"));
    }
    let rf = f64::from(r);
    let d = p1 * mu00;
    Ok(match stat {
        Statistic::Ancova => d * (1.0 - rho),
        Statistic::Slanc => 6.0 * d * (rf - rho) / (rf * (rf + 1.0) * (rf + 2.0)),
        Statistic::Slain => 6.0 * d * (1.0 - rho) / (rho * rf * (rf - 1.0) + 2.0 * (2.0 * rf + 1.0)),
    })
}

/// Outcome of one executable check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    /// Short identifier.
    pub name: String,
    /// Whether every observed value is within tolerance of its expectation.
    pub passed: bool,
    /// Values produced by the code under test.
    pub observed: Vec<f64>,
    /// Values they are compared against.
    pub expected: Vec<f64>,
    /// Allowed absolute difference (relative when stated in the name).
    pub tolerance: f64,
}

impl CheckReport {
    /// Compares elementwise with an absolute tolerance.
    pub fn compare(name: impl Into<String>, observed: Vec<f64>, expected: Vec<f64>, tolerance: f64) -> Self {
        let passed = observed.len() == expected.len()
            && observed
                .iter()
                .zip(&expected)
                .all(|(o, e)| (o - e).abs() <= tolerance);
        CheckReport {
            name: name.into(),
            passed,
            observed,
            expected,
            tolerance,
        }
    }

    /// Compares elementwise with a tolerance relative to the expectation.
    pub fn compare_rel(name: impl Into<String>, observed: Vec<f64>, expected: Vec<f64>, tolerance: f64) -> Self {
        let passed = observed.len() == expected.len()
            && observed
                .iter()
                .zip(&expected)
                .all(|(o, e)| (o - e).abs() <= tolerance * e.abs().max(f64::MIN_POSITIVE));
        CheckReport {
            name: name.into(),
            passed,
            observed,
            expected,
            tolerance,
        }
    }

    /// Report with the outcome inverted, for checks that must fail.
    pub fn expect_failure(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self.passed = !self.passed;
        self
    }
}

/// Projection onto the columns of `Z = [1, s j]`, `j = 0..r`.
fn time_projection(s: f64, r: u32) -> DMatrix<f64> {
    let m = r as usize + 1;
    let z = DMatrix::from_fn(m, 2, |j, c| if c == 0 { 1.0 } else { s * j as f64 });
    let ztz = z.transpose() * &z;
    let inv = ztz.try_inverse().expect("r >= 1 gives two distinct times");
    &z * inv * z.transpose()
}

/// The two products `P Σ` and `Σ P` whose equality decides whether the
/// two-stage slope estimator coincides with GLS, where `P` projects onto
/// intercept and time.
pub fn two_stage_products(spec: &CovarianceSpec, r: u32, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if r == 0 {
        return Err(DesignError::domain("r", "must be >= 1"));
    }
    let sigma = spec.matrix(0.0, s, r)?;
    let proj = time_projection(s, r);
    Ok((&proj * &sigma, &sigma * &proj))
}

/// Checks whether the projection onto intercept and time commutes with the
/// covariance matrix, which holds exactly when per-participant OLS slopes
/// averaged by group reproduce the GLS slope difference.
pub fn check_two_stage_equivalence(spec: &CovarianceSpec, r: u32, s: f64) -> Result<CheckReport> {
    let (hv, vh) = two_stage_products(spec, r, s)?;
    let diff = (&hv - &vh).abs().max();
    let scale = hv.abs().max().max(1.0);
    Ok(CheckReport::compare(
        format!("two-stage commutes ({}, r={r})", model_name(spec)),
        vec![diff / scale],
        vec![0.0],
        1e-10,
    ))
}

fn model_name(spec: &CovarianceSpec) -> &'static str {
    match spec {
        CovarianceSpec::Cs { .. } => "cs",
        CovarianceSpec::Dex { .. } => "dex",
        CovarianceSpec::Rs { .. } => "rs",
    }
}

/// Checks that with a fixed follow-up `tau`, two follow-up visits give the
/// same slope-difference variance as one, together with the covariance
/// identity `s00 - s_tt = 2 (s_0h - s_ht)` (with `h = tau / 2`) that
/// characterises it.
pub fn check_r1_r2_equal_variance(spec: &CovarianceSpec, tau: f64) -> Result<CheckReport> {
    let sigma2 = spec.matrix(0.0, tau / 2.0, 2)?;
    let lhs = sigma2[(0, 0)] - sigma2[(2, 2)];
    let rhs = 2.0 * (sigma2[(0, 1)] - sigma2[(1, 2)]);
    let query = |r: u32| DesignQuery {
        grid: TimeGrid::fixed_tau(r, tau),
        pop: PopulationSpec::new(0.5),
        cov: *spec,
        hyp: Hypothesis::Ldd,
        effect: EffectSpec::Absolute { beta: 1.0 },
        alpha: 0.05,
    };
    let v1 = unit_variance(&query(1))?.value;
    let v2 = unit_variance(&query(2))?.value;
    let scale = sigma2.abs().max().max(1.0);
    let identity_gap = (lhs - rhs) / scale;
    let variance_gap = (v1 - v2) / v1;
    Ok(CheckReport::compare(
        format!("r=1 and r=2 variances agree ({}, tau={tau})", model_name(spec)),
        vec![identity_gap, variance_gap],
        vec![0.0, 0.0],
        1e-10,
    ))
}

/// Unit variance of the exposure coefficient `lambda_1` in the model for
/// successive differences `Y_j - Y_{j-1}`, with covariance `Δ Σ Δ'`.
pub fn difference_model_variance(sigma: &DMatrix<f64>, pe: f64) -> Result<f64> {
    let m = sigma.nrows();
    if m < 2 {
        return Err(DesignError::domain("r", "must be >= 1"));
    }
    let delta = DMatrix::from_fn(m - 1, m, |i, j| {
        if j == i + 1 {
            1.0
        } else if j == i {
            -1.0
        } else {
            0.0
        }
    });
    let dsd = &delta * sigma * delta.transpose();
    let w = cholesky(&dsd)
        .map_err(|_| DesignError::Decomposition("differenced covariance is singular".into()))?
        .inverse()
        .sum();
    // Information for (lambda_0, lambda_1) is w [[1, pe], [pe, pe]].
    let info = DMatrix::from_row_slice(2, 2, &[w, pe * w, pe * w, pe * w]);
    crate::variance::last_inverse_diagonal(&info)
}

/// Checks that the differenced-response model and the between/within model
/// estimate the same slope difference: `Var(lambda_1) = s² Var(eta_5)`, and
/// that `Var(eta_5)` from a direct GLS information matrix equals the
/// engine's between/within formula.
pub fn check_bw_diff_equivalence(sigma: &DMatrix<f64>, r: u32, s: f64) -> Result<CheckReport> {
    if r == 0 || sigma.nrows() != r as usize + 1 {
        return Err(DesignError::domain("sigma", "must be (r + 1) x (r + 1) with r >= 1"));
    }
    let pe = 0.5;
    let lambda = difference_model_variance(sigma, pe)?;
    // Direct GLS information for columns (1, s j, k, k s j).
    let m = r as usize + 1;
    let z = DMatrix::from_fn(m, 2, |j, c| if c == 0 { 1.0 } else { s * j as f64 });
    let prec = cholesky(sigma)?.inverse();
    let g = z.transpose() * prec * &z;
    let mut info = DMatrix::zeros(4, 4);
    for a in 0..2 {
        for b in 0..2 {
            info[(a, b)] = g[(a, b)];
            info[(a, b + 2)] = pe * g[(a, b)];
            info[(a + 2, b)] = pe * g[(a, b)];
            info[(a + 2, b + 2)] = pe * g[(a, b)];
        }
    }
    let eta = crate::variance::last_inverse_diagonal(&info)?;
    let sums = inverse_sums(sigma)?;
    let engine = var_bw(&sums, s, &PopulationSpec::new(pe))?.value;
    Ok(CheckReport::compare(
        format!("difference model matches between/within (r={r}, s={s})"),
        vec![(lambda - s * s * eta) / lambda, (engine - eta) / eta],
        vec![0.0, 0.0],
        1e-10,
    ))
}

/// Checks closed-form inverse sums against a numerical inverse.
pub fn check_closed_forms(sigma2: f64, rho: f64, s: f64, r: u32) -> Result<CheckReport> {
    let cs_closed = cs_inverse_sums_closed(sigma2, rho, r)?;
    let cs_generic = inverse_sums(&build_cs(sigma2, rho, r)?)?;
    let ar_closed = ar1_inverse_sums_closed(sigma2, rho, s, r)?;
    let ar_generic = inverse_sums(&build_dex(sigma2, rho, 1.0, s, r)?)?;
    let flat = |t: &crate::covariance::SumTriple| vec![t.s0, t.s1, t.s2];
    let mut observed = flat(&cs_closed);
    observed.extend(flat(&ar_closed));
    let mut expected = flat(&cs_generic);
    expected.extend(flat(&ar_generic));
    Ok(CheckReport::compare_rel(
        format!("closed-form inverse sums (rho={rho}, r={r}, relative)"),
        observed,
        expected,
        1e-10,
    ))
}

/// Checks the engine's unit variance against the last diagonal entry of the
/// inverse of the directly integrated information matrix.
pub fn check_engine_against_information(query: &DesignQuery, label: &str) -> Result<CheckReport> {
    let info = expected_information(query, 160)?;
    let direct = crate::variance::last_inverse_diagonal(&info)?;
    let engine = unit_variance(query)?.value;
    Ok(CheckReport::compare_rel(
        format!("engine matches integrated information ({label}, relative)"),
        vec![engine],
        vec![direct],
        1e-7,
    ))
}

fn raw_example() -> RsRawParams {
    RsRawParams {
        sigma_w2: 0.5,
        sigma_b0_2: 1.0,
        sigma_b1_2: 0.2,
        sigma_b0b1: 0.1,
    }
}

fn rs(raw: RsRawParams) -> CovarianceSpec {
    CovarianceSpec::Rs {
        params: crate::covariance::RsParams::Raw(raw),
    }
}

/// Runs every algebraic check plus a Monte Carlo size check and an
/// information cross-check sized by `cfg`.
pub fn verify_battery(cfg: &SimConfig) -> Result<Vec<CheckReport>> {
    let cs = CovarianceSpec::Cs { sigma2: 1.3, rho: 0.6 };
    let ar1 = CovarianceSpec::Dex {
        sigma2: 1.0,
        rho: 0.8,
        theta: 1.0,
    };
    let dex = CovarianceSpec::Dex {
        sigma2: 0.7,
        rho: 0.6,
        theta: 0.5,
    };
    let rs_spec = rs(raw_example());
    let mut out = vec![
        check_two_stage_equivalence(&cs, 4, 2.0)?,
        check_two_stage_equivalence(&rs_spec, 4, 2.0)?,
        check_two_stage_equivalence(&ar1, 2, 1.0)?.expect_failure("two-stage differs from GLS (ar1, r=2)"),
        check_two_stage_equivalence(&dex, 3, 1.5)?.expect_failure("two-stage differs from GLS (dex, r=3)"),
    ];
    let (hv, vh) = two_stage_products(&ar1, 2, 1.0)?;
    out.push(CheckReport::compare(
        "ar1 product entries (P S vs S P)",
        vec![hv[(0, 1)], vh[(0, 1)], hv[(1, 0)], vh[(1, 0)]],
        vec![0.866, 0.813, 0.813, 0.866],
        1e-3,
    ));
    for spec in [cs, dex, rs_spec] {
        out.push(check_r1_r2_equal_variance(&spec, 6.0)?);
    }
    out.push(check_bw_diff_equivalence(&build_cs(1.0, 0.4, 2)?, 2, 1.5)?);
    out.push(check_bw_diff_equivalence(&rs_spec.matrix(0.0, 0.5, 3)?, 3, 0.5)?);
    out.push(check_bw_diff_equivalence(&build_dex(1.0, 0.7, 0.5, 1.0, 4)?, 4, 1.0)?);
    for (rho, r) in [(0.1, 1), (0.3, 3), (0.85, 7)] {
        out.push(check_closed_forms(0.9, rho, 1.5, r)?);
    }

    out.push(CheckReport::compare(
        "ancova noncentrality ratio",
        vec![ancova_ncp_ratio(1, 0.0)?, ancova_ncp_ratio(6, 0.857)?],
        vec![2.0, 7.0 / (6.0 * 0.143)],
        1e-9,
    ));
    for stat in [Statistic::Ancova, Statistic::Slanc, Statistic::Slain] {
        let (r, rho, p1, mu00) = (5, 0.6, 0.1, 3.5);
        let c = contrast_vector(stat, r, rho)?;
        let direct: f64 = c.iter().map(|cj| cj * p1 * mu00).sum();
        out.push(CheckReport::compare(
            format!("{stat:?} bias under equal slopes").to_lowercase(),
            vec![summary_bias_h0(stat, r, rho, p1, mu00)?],
            vec![direct],
            1e-12,
        ));
    }

    let mut pop = PopulationSpec::new(0.3);
    pop.v_t0 = 4.0;
    pop.rho_e_t0 = 0.4;
    let base = DesignQuery {
        grid: TimeGrid::fixed_s(3, 1.0),
        pop,
        cov: cs,
        hyp: Hypothesis::Ldd,
        effect: EffectSpec::Absolute { beta: 0.2 },
        alpha: 0.05,
    };
    out.push(check_engine_against_information(&base, "cs ldd")?);
    out.push(check_engine_against_information(&DesignQuery { hyp: Hypothesis::Cmd, ..base }, "cs cmd")?);
    out.push(check_engine_against_information(&DesignQuery { cov: dex, ..base }, "dex ldd")?);
    out.push(check_engine_against_information(&DesignQuery { cov: rs_spec, ..base }, "rs ldd")?);
    out.push(check_engine_against_information(
        &DesignQuery {
            cov: rs_spec,
            hyp: Hypothesis::Cmd,
            ..base
        },
        "rs cmd",
    )?);
    out.push(check_engine_against_information(&DesignQuery { hyp: Hypothesis::Bw, ..base }, "cs bw")?);

    let mc = mc_information(&DesignQuery { cov: rs_spec, ..base }, cfg)?;
    let analytic = unit_variance_with(&DesignQuery { cov: rs_spec, ..base }, &cfg.quadrature)?.value;
    out.push(CheckReport::compare(
        "monte carlo information matches quadrature (rs ldd, 3 se)",
        vec![mc.unit_variance],
        vec![analytic],
        3.0 * mc.unit_variance_se,
    ));

    let null = DesignQuery {
        effect: EffectSpec::Absolute { beta: 0.0 },
        ..base
    };
    let sims = (cfg.replicates / 10).max(200);
    let size = simulate_power(&null, 100, &SimConfig { replicates: sims, ..*cfg })?;
    let (lo, hi) = wilson_interval(size.rejections, size.replicates, z_quantile(0.995));
    out.push(CheckReport::compare(
        "wald test size within 99% interval",
        vec![0.05],
        vec![0.5 * (lo + hi)],
        0.5 * (hi - lo),
    ));
    // Large enough that the asymptotic power formula applies.
    let target = DesignQuery {
        effect: EffectSpec::Absolute { beta: 0.08 },
        ..base
    };
    let n = required_n(0.8, &target)?.n;
    let est = simulate_power(&target, n, &SimConfig { replicates: sims, ..*cfg })?;
    let (lo, hi) = wilson_interval(est.rejections, est.replicates, z_quantile(0.995));
    out.push(CheckReport::compare(
        format!("power at required n={n} within 99% interval"),
        vec![est.analytic],
        vec![0.5 * (lo + hi)],
        0.5 * (hi - lo),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_is_symmetric_at_half() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn ancova_example() {
        let v = ancova_ncp_ratio(6, 0.857).unwrap();
        assert!((v - 8.159).abs() < 1e-3);
        assert!((summary_bias_h0(Statistic::Ancova, 6, 0.857, 0.1, 3.5).unwrap() - 0.05005).abs() < 1e-12);
        for stat in [Statistic::Ancova, Statistic::Slanc, Statistic::Slain] {
            assert_eq!(summary_bias_h0(stat, 4, 0.3, 0.0, 3.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn contrasts_reproduce_bias() {
        for r in 1..8 {
            for rho in [0.0, 0.3, 0.9] {
                for stat in [Statistic::Ancova, Statistic::Slanc, Statistic::Slain] {
                    let c = contrast_vector(stat, r, rho).unwrap();
                    assert_eq!(c.len(), r as usize + 1);
                    let direct: f64 = c.iter().sum::<f64>() * 0.1 * 3.5;
                    let closed = summary_bias_h0(stat, r, rho, 0.1, 3.5).unwrap();
                    assert!((direct - closed).abs() < 1e-12, "{stat:?} r={r} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn ar1_projection_products() {
        let ar1 = CovarianceSpec::Dex {
            sigma2: 1.0,
            rho: 0.8,
            theta: 1.0,
        };
        let (hv, vh) = two_stage_products(&ar1, 2, 1.0).unwrap();
        // P = [[5,2,-1],[2,2,2],[-1,2,5]] / 6; first row times column two of Σ.
        let expected_hv01 = (5.0 * 0.8 + 2.0 * 1.0 - 1.0 * 0.8) / 6.0;
        let expected_vh01 = (1.0 * 2.0 + 0.8 * 2.0 + 0.64 * 2.0) / 6.0;
        assert!((hv[(0, 1)] - expected_hv01).abs() < 1e-12);
        assert!((vh[(0, 1)] - expected_vh01).abs() < 1e-12);
    }

    #[test]
    fn streams_are_reproducible() {
        let a: f64 = replicate_rng(9, 3).random();
        let b: f64 = replicate_rng(9, 3).random();
        let c: f64 = replicate_rng(9, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
