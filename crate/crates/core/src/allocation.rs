//! Cost-optimal choice of the number of participants `N` and follow-up
//! measures `r`.
//!
//! With total cost `N c1 (1 + r / κ)`, both the budget-constrained power
//! maximisation and the power-constrained cost minimisation share the same
//! optimal `r`, the minimiser of `(κ + r) c' Σ_B c`.  Only `N` depends on
//! which constraint is active.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{slope_reliability, CovarianceSpec, RsParams, RsRawParams, Spacing};
use crate::error::{DesignError, Result};
use crate::solvers::{power_from_variance, required_n, DesignQuery, RBounds};
use crate::variance::{unit_variance, Hypothesis};

/// Which side of the cost/power trade-off is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConstraint {
    /// Maximise power subject to a total budget.
    Budget {
        /// Money available for the whole study.
        total: f64,
    },
    /// Minimise cost subject to a power floor.
    PowerFloor {
        /// Required power.
        pi: f64,
    },
}

/// Cost structure of the study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Cost of recruiting a participant and taking the first measurement.
    pub c1: f64,
    /// Ratio of the first-measurement cost to each follow-up measurement
    /// cost.
    pub kappa: f64,
    /// Active constraint.
    pub constraint: CostConstraint,
}

impl CostSpec {
    /// Validates costs and the constraint value.
    pub fn validate(&self) -> Result<()> {
        if !(self.c1.is_finite() && self.c1 > 0.0) {
            return Err(DesignError::domain("cost.c1", "must be > 0"));
        }
        if !(self.kappa.is_finite() && self.kappa >= 1.0) {
            return Err(DesignError::domain("cost.kappa", "must be >= 1"));
        }
        match self.constraint {
            CostConstraint::Budget { total } if !(total.is_finite() && total > 0.0) => {
                Err(DesignError::domain("cost.constraint.budget.total", "must be > 0"))
            }
            CostConstraint::PowerFloor { pi } if !(pi > 0.0 && pi < 1.0) => {
                Err(DesignError::domain("cost.constraint.power_floor.pi", "must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// Total cost `n c1 (κ + r) / κ`.
pub fn study_cost(n: u64, r: u32, c1: f64, kappa: f64) -> f64 {
    n as f64 * c1 * (kappa + f64::from(r)) / kappa
}

/// Objective `(κ + r) c' Σ_B c` whose minimiser is the optimal `r`.
pub fn objective(r: u32, kappa: f64, query: &DesignQuery) -> Result<f64> {
    Ok((kappa + f64::from(r)) * unit_variance(&query.with_r(r))?.value)
}

/// How the optimal `r` was located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoptMethod {
    /// Closed-form continuous optimum, then comparison of neighbouring
    /// integers.
    ClosedForm,
    /// The objective is monotone or unimodal-maximum, so only the bounds
    /// compete.
    EndpointRule,
    /// Real roots of the first-order condition, then comparison of
    /// neighbouring integers.
    RootEquation,
    /// Every integer in the bounds was evaluated.
    GridScan,
}

/// Optimal number of follow-up measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalR {
    /// Integer optimum.
    pub r: u32,
    /// Continuous optimum when a closed form provides one.
    pub continuous: Option<f64>,
    /// Route used.
    pub method: RoptMethod,
    /// True when the optimum sits on the upper search bound, meaning a
    /// larger feasibility cap would change the answer.
    pub at_upper_bound: bool,
}

fn cs_like(cov: &CovarianceSpec) -> Option<(f64, f64)> {
    match *cov {
        CovarianceSpec::Cs { sigma2, rho } => Some((sigma2, rho)),
        CovarianceSpec::Dex { sigma2, rho, theta: 0.0 } => Some((sigma2, rho)),
        _ => None,
    }
}

/// Picks the candidate with the smallest objective; ties go to smaller `r`.
fn best_of(candidates: &[u32], kappa: f64, query: &DesignQuery) -> Result<u32> {
    let mut sorted: Vec<u32> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(u32, f64)> = None;
    for r in sorted {
        let v = objective(r, kappa, query)?;
        match best {
            Some((_, bv)) if !strictly_less(v, bv) => {}
            _ => best = Some((r, v)),
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| DesignError::domain("r_bounds", "no candidate values of r"))
}

fn strictly_less(a: f64, b: f64) -> bool {
    a < b && (b - a) > 1e-12 * b.abs()
}

/// Exhaustive search of the objective over the bounds (parallel
/// evaluation, deterministic reduction).
pub fn scan_optimal_r(query: &DesignQuery, kappa: f64, bounds: RBounds) -> Result<u32> {
    bounds.validate(query)?;
    let values: Vec<Result<f64>> = (bounds.lo..=bounds.hi)
        .into_par_iter()
        .map(|r| objective(r, kappa, query))
        .collect();
    let mut best: Option<(u32, f64)> = None;
    for (r, v) in (bounds.lo..=bounds.hi).zip(values) {
        let v = v?;
        match best {
            Some((_, bv)) if !strictly_less(v, bv) => {}
            _ => best = Some((r, v)),
        }
    }
    Ok(best.expect("bounds are non-empty").0)
}

fn clamp_candidates(x: f64, bounds: RBounds) -> [u32; 2] {
    let lo = f64::from(bounds.lo);
    let hi = f64::from(bounds.hi);
    let f = x.floor().clamp(lo, hi) as u32;
    let c = x.ceil().clamp(lo, hi) as u32;
    [f, c]
}

/// Real roots of `g(r) = kappa` on `[a, b]`, located by sign changes on a
/// fine grid and refined by bisection.
fn roots_of(g: impl Fn(f64) -> f64, kappa: f64, a: f64, b: f64) -> Vec<f64> {
    let h = |r: f64| g(r) - kappa;
    let steps = (((b - a) / 0.01).ceil() as usize).clamp(1, 200_000);
    let dx = (b - a) / steps as f64;
    let mut roots = Vec::new();
    let mut x0 = a;
    let mut f0 = h(x0);
    for i in 1..=steps {
        let x1 = a + dx * i as f64;
        let f1 = h(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0.is_finite() && f1.is_finite() && f0.signum() != f1.signum() {
            let (mut lo, mut hi, mut flo) = (x0, x1, f0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = h(mid);
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    roots
}

/// Optimal number of follow-up measures within `bounds`.
///
/// Closed forms and first-order conditions are used where they exist:
/// constant difference under CS, slope difference under CS (fixed spacing
/// or fixed follow-up) and slope difference under RS, all with a common
/// entry time.  Other settings are scanned exhaustively.  Continuous optima
/// are turned into integers by comparing neighbours on the exact objective.
pub fn optimal_r(query: &DesignQuery, kappa: f64, bounds: RBounds) -> Result<OptimalR> {
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(DesignError::domain("cost.kappa", "must be >= 1"));
    }
    bounds.validate(query)?;
    query.with_r(bounds.hi).validate_design()?;
    let fixed_entry = query.pop.v_t0 == 0.0 || query.hyp == Hypothesis::Bw;
    let unconfounded = fixed_entry || query.pop.rho_e_t0 == 0.0;
    let (lo, hi) = (bounds.lo, bounds.hi);
    let slope = query.hyp != Hypothesis::Cmd;

    let (r, continuous, method) = match (cs_like(&query.cov), query.cov) {
        (Some((_, rho)), _) if !slope && unconfounded => {
            if rho > 0.0 {
                let rc = ((kappa - 1.0) * (1.0 - rho) / rho).sqrt() - 1.0;
                let mut cands = clamp_candidates(rc, bounds).to_vec();
                cands.extend([lo, hi]);
                (best_of(&cands, kappa, query)?, Some(rc), RoptMethod::ClosedForm)
            } else {
                (best_of(&[lo, hi], kappa, query)?, None, RoptMethod::EndpointRule)
            }
        }
        (Some(_), _) if slope && fixed_entry => {
            if query.grid.mode.is_fixed_tau() {
                // (κ + r) r / ((r + 1)(r + 2)) rises then falls, so the
                // minimum over an interval sits at an end point.
                (best_of(&[lo, hi], kappa, query)?, None, RoptMethod::EndpointRule)
            } else {
                (hi, None, RoptMethod::EndpointRule)
            }
        }
        (None, CovarianceSpec::Rs { params }) if slope && fixed_entry => {
            let raw = params.to_raw()?;
            let w = raw.sigma_w2;
            let (g, start): (Box<dyn Fn(f64) -> f64>, f64) = match query.grid.mode {
                Spacing::FixedS { s } => {
                    let q = raw.sigma_b1_2 * s * s / (12.0 * w);
                    (
                        Box::new(move |r: f64| {
                            let c = r * (r + 1.0) * (r + 2.0);
                            (-r * r * (2.0 * r + 3.0) + q * c * c) / (3.0 * r * r + 6.0 * r + 2.0)
                        }),
                        f64::from(lo.max(1)),
                    )
                }
                Spacing::FixedTau { tau } => {
                    let q = raw.sigma_b1_2 * tau * tau / (12.0 * w);
                    (
                        Box::new(move |r: f64| {
                            let p = (r + 1.0) * (r + 2.0);
                            (r * (4.0 + 3.0 * r) + q * p * p) / (r * r - 2.0)
                        }),
                        f64::from(lo.max(1)),
                    )
                }
            };
            let roots = roots_of(g, kappa, start, f64::from(hi).max(start));
            let mut cands = vec![lo, hi];
            for &x in &roots {
                cands.extend(clamp_candidates(x, bounds));
            }
            let r = best_of(&cands, kappa, query)?;
            let continuous = roots
                .iter()
                .copied().find(|x| x.floor() as u32 == r || x.ceil() as u32 == r);
            (r, continuous, RoptMethod::RootEquation)
        }
        _ => (scan_optimal_r(query, kappa, bounds)?, None, RoptMethod::GridScan),
    };
    Ok(OptimalR {
        r,
        continuous,
        method,
        at_upper_bound: r == hi && hi > lo,
    })
}

/// Participants at a given `r`: as many as the budget affords, or as few
/// as reach the power floor.
pub fn optimal_n(r_opt: u32, cost: &CostSpec, query: &DesignQuery) -> Result<u64> {
    cost.validate()?;
    match cost.constraint {
        CostConstraint::Budget { total } => {
            let x = cost.kappa * total / (cost.c1 * (cost.kappa + f64::from(r_opt)));
            let mut n = (x * (1.0 + 1e-12)).floor().max(0.0) as u64;
            while n > 0 && study_cost(n, r_opt, cost.c1, cost.kappa) > total * (1.0 + 1e-12) {
                n -= 1;
            }
            if n < 2 {
                return Err(DesignError::BudgetTooSmall { budget: total, n, r: r_opt });
            }
            Ok(n)
        }
        CostConstraint::PowerFloor { pi } => Ok(required_n(pi, &query.with_r(r_opt))?.n),
    }
}

/// Complete cost-optimal design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    /// Optimal number of follow-up measures.
    pub r_opt: u32,
    /// Number of participants.
    pub n_opt: u64,
    /// Power achieved by `(n_opt, r_opt)`.
    pub power: f64,
    /// Total cost of `(n_opt, r_opt)`.
    pub cost: f64,
    /// For random slopes: slope reliability recomputed at `r_opt`.
    pub slope_rel_at_ropt: Option<f64>,
    /// True when `r_opt` equals the upper search bound.
    pub at_upper_bound: bool,
    /// Route used to find `r_opt`.
    pub method: RoptMethod,
}

/// Spacing rule and raw parameters for reporting the slope reliability of
/// an RS model at a new `r`.
fn reliability_context(query: &DesignQuery) -> Result<Option<(RsRawParams, Spacing)>> {
    match query.cov {
        CovarianceSpec::Rs { params } => {
            let mode = match params {
                RsParams::Intuitive(p) => p.rel_mode,
                RsParams::Raw(_) => query.grid.mode,
            };
            Ok(Some((params.to_raw()?, mode)))
        }
        _ => Ok(None),
    }
}

/// Solves the allocation problem: optimal `r`, then `N` under the active
/// constraint, with achieved power and exact cost.
pub fn solve_allocation(query: &DesignQuery, cost: &CostSpec, bounds: RBounds) -> Result<AllocationSolution> {
    cost.validate()?;
    let opt = optimal_r(query, cost.kappa, bounds)?;
    let n = optimal_n(opt.r, cost, query)?;
    let q = query.with_r(opt.r);
    let v = unit_variance(&q)?.value;
    let power = power_from_variance(n as f64, q.coefficient()?, v, q.alpha);
    let slope_rel_at_ropt = match reliability_context(query)? {
        Some((raw, mode)) if opt.r >= 1 => Some(slope_reliability(&raw, mode, opt.r)?),
        _ => None,
    };
    Ok(AllocationSolution {
        r_opt: opt.r,
        n_opt: n,
        power,
        cost: study_cost(n, opt.r, cost.c1, cost.kappa),
        slope_rel_at_ropt,
        at_upper_bound: opt.at_upper_bound,
        method: opt.method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::TimeGrid;
    use crate::solvers::EffectSpec;
    use crate::variance::PopulationSpec;

    fn cs_query(hyp: Hypothesis, grid: TimeGrid, rho: f64) -> DesignQuery {
        DesignQuery {
            grid,
            pop: PopulationSpec::new(0.5),
            cov: CovarianceSpec::Cs { sigma2: 1.0, rho },
            hyp,
            effect: EffectSpec::Absolute { beta: 0.1 },
            alpha: 0.05,
        }
    }

    #[test]
    fn cmd_kappa_one_takes_no_repeats() {
        let q = cs_query(Hypothesis::Cmd, TimeGrid::fixed_s(0, 1.0), 0.5);
        let a = objective(0, 1.0, &q).unwrap();
        let b = objective(1, 1.0, &q).unwrap();
        let c = objective(2, 1.0, &q).unwrap();
        assert!(a < b && b < c);
        assert_eq!(optimal_r(&q, 1.0, RBounds { lo: 0, hi: 20 }).unwrap().r, 0);
    }

    #[test]
    fn cmd_closed_form_exact_integer() {
        let q = cs_query(Hypothesis::Cmd, TimeGrid::fixed_s(0, 1.0), 0.5);
        let o = optimal_r(&q, 5.0, RBounds { lo: 0, hi: 20 }).unwrap();
        assert_eq!(o.r, 1);
        assert!((o.continuous.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ldd_fixed_s_objective_decreases() {
        let q = cs_query(Hypothesis::Ldd, TimeGrid::fixed_s(1, 1.0), 0.6);
        let mut prev = f64::INFINITY;
        for r in 1..40 {
            let v = objective(r, 3.0, &q).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn ldd_fixed_tau_five_beats_one_at_kappa_ten() {
        let q = cs_query(Hypothesis::Ldd, TimeGrid::fixed_tau(1, 10.0), 0.6);
        assert!(objective(5, 10.0, &q).unwrap() < objective(1, 10.0, &q).unwrap());
        // Below kappa = 5 a single follow-up is optimal.
        assert_eq!(optimal_r(&q, 4.0, RBounds { lo: 1, hi: 30 }).unwrap().r, 1);
    }

    #[test]
    fn budget_floor_and_cost() {
        let q = cs_query(Hypothesis::Ldd, TimeGrid::fixed_tau(1, 18.0), 0.6);
        let cost = CostSpec {
            c1: 80.0,
            kappa: 5.0,
            constraint: CostConstraint::Budget { total: 100_000.0 },
        };
        assert_eq!(optimal_n(1, &cost, &q).unwrap(), 1041);
        let cost20 = CostSpec { kappa: 20.0, ..cost };
        assert_eq!(optimal_n(18, &cost20, &q).unwrap(), 657);
        assert_eq!(study_cost(732, 12, 80.0, 20.0), 93696.0);
        let tiny = CostSpec {
            constraint: CostConstraint::Budget { total: 100.0 },
            ..cost
        };
        assert!(matches!(optimal_n(1, &tiny, &q), Err(DesignError::BudgetTooSmall { .. })));
    }
}
