//! Property-based invariants of the design engine.

use longidesign::allocation::{solve_allocation, study_cost, CostConstraint, CostSpec};
use longidesign::covariance::{CovarianceSpec, RsParams, RsRawParams, TimeGrid};
use longidesign::oracle::{check_bw_diff_equivalence, check_closed_forms, check_r1_r2_equal_variance};
use longidesign::scenario::Scenario;
use longidesign::solvers::{
    inflate_for_dropout, min_detectable_effect, power, power_from_variance, required_n, required_r, DesignQuery,
    EffectSpec, RBounds, RequiredR,
};
use longidesign::variance::{unit_variance, Hypothesis, PopulationSpec};
use proptest::prelude::*;

fn cs_strategy() -> impl Strategy<Value = CovarianceSpec> {
    (0.1..4.0f64, 0.0..0.95f64).prop_map(|(sigma2, rho)| CovarianceSpec::Cs { sigma2, rho })
}

fn dex_strategy() -> impl Strategy<Value = CovarianceSpec> {
    (0.1..4.0f64, 0.05..0.95f64, 0.0..1.0f64).prop_map(|(sigma2, rho, theta)| CovarianceSpec::Dex { sigma2, rho, theta })
}

fn rs_strategy() -> impl Strategy<Value = CovarianceSpec> {
    (0.05..1.0f64, 0.1..2.0f64, 0.001..0.2f64, -0.7..0.7f64).prop_map(|(w, b0, b1, corr)| CovarianceSpec::Rs {
        params: RsParams::Raw(RsRawParams {
            sigma_w2: w,
            sigma_b0_2: b0,
            sigma_b1_2: b1,
            sigma_b0b1: corr * (b0 * b1).sqrt(),
        }),
    })
}

fn any_cov() -> impl Strategy<Value = CovarianceSpec> {
    prop_oneof![cs_strategy(), dex_strategy(), rs_strategy()]
}

fn query(cov: CovarianceSpec, hyp: Hypothesis, pe: f64, r: u32, beta: f64) -> DesignQuery {
    DesignQuery {
        grid: TimeGrid::fixed_s(r, 1.5),
        pop: PopulationSpec::new(pe),
        cov,
        hyp,
        effect: EffectSpec::Absolute { beta },
        alpha: 0.05,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_inverse_sums_match_numerical_inverse(
        sigma2 in 0.1..5.0f64, rho in 0.01..0.99f64, s in 0.1..5.0f64, r in 0u32..25,
    ) {
        let rep = check_closed_forms(sigma2, rho, s, r).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }

    #[test]
    fn one_and_two_follow_ups_agree_over_fixed_follow_up(cov in any_cov(), tau in 0.5..20.0f64) {
        let rep = check_r1_r2_equal_variance(&cov, tau).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }

    #[test]
    fn difference_model_matches_between_within(cov in any_cov(), r in 1u32..8, s in 0.3..4.0f64) {
        let sigma = cov.matrix(0.0, s, r).unwrap();
        let rep = check_bw_diff_equivalence(&sigma, r, s).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }

    #[test]
    fn required_n_is_the_smallest_sufficient_size(
        cov in any_cov(), ldd in any::<bool>(), pe in 0.1..0.9f64, r in 1u32..8,
        beta in 0.05..1.0f64, target in 0.5..0.99f64,
    ) {
        let hyp = if ldd { Hypothesis::Ldd } else { Hypothesis::Cmd };
        let q = query(cov, hyp, pe, r, beta);
        let n = required_n(target, &q).unwrap().n;
        prop_assert!(power(n, &q).unwrap() >= target - 1e-12);
        if n > 2 {
            prop_assert!(power(n - 1, &q).unwrap() < target);
        }
    }

    #[test]
    fn power_grows_with_sample_size(cov in any_cov(), pe in 0.1..0.9f64, n in 2u64..5000, beta in 0.01..0.5f64) {
        let q = query(cov, Hypothesis::Ldd, pe, 3, beta);
        prop_assert!(power(n + 1, &q).unwrap() >= power(n, &q).unwrap());
    }

    #[test]
    fn detectable_effect_has_exactly_the_target_power(
        cov in any_cov(), pe in 0.1..0.9f64, n in 10u64..5000, target in 0.5..0.99f64,
    ) {
        let q = query(cov, Hypothesis::Ldd, pe, 4, 1.0);
        let m = min_detectable_effect(target, n, &q).unwrap();
        let v = unit_variance(&q).unwrap().value;
        let p = power_from_variance(n as f64, m.coefficient, v, q.alpha);
        prop_assert!((p - target).abs() < 1e-9);
    }

    #[test]
    fn compound_symmetry_variance_falls_with_more_measures(cov in cs_strategy(), pe in 0.1..0.9f64, r in 1u32..30) {
        for hyp in [Hypothesis::Cmd, Hypothesis::Ldd] {
            let a = unit_variance(&query(cov, hyp, pe, r, 1.0)).unwrap().value;
            let b = unit_variance(&query(cov, hyp, pe, r + 1, 1.0)).unwrap().value;
            prop_assert!(b <= a * (1.0 + 1e-12));
        }
    }

    #[test]
    fn variance_is_symmetric_in_exposure_prevalence(cov in any_cov(), pe in 0.05..0.95f64, r in 1u32..8) {
        let a = unit_variance(&query(cov, Hypothesis::Ldd, pe, r, 1.0)).unwrap().value;
        let b = unit_variance(&query(cov, Hypothesis::Ldd, 1.0 - pe, r, 1.0)).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn required_r_is_smallest_at_balanced_exposure(cov in any_cov(), pe in 0.05..0.95f64, beta in 0.05..0.5f64) {
        let base = query(cov, Hypothesis::Ldd, 0.5, 4, beta);
        let n = required_n(0.8, &base).unwrap().n;
        let bounds = RBounds { lo: 1, hi: 40 };
        let r_half = match required_r(0.8, n, &base, bounds).unwrap() {
            RequiredR::Attained { r, .. } => r,
            RequiredR::Unattainable { .. } => return Err(TestCaseError::fail("balanced design must reach the target")),
        };
        prop_assert!(r_half <= 4);
        if let RequiredR::Attained { r, .. } = required_r(0.8, n, &query(cov, Hypothesis::Ldd, pe, 4, beta), bounds).unwrap() {
            prop_assert!(r >= r_half);
        }
    }

    #[test]
    fn budget_solution_is_affordable_and_maximal(
        cov in prop_oneof![cs_strategy(), dex_strategy()], kappa in 1.0..40.0f64,
        c1 in 10.0..200.0f64, total in 2.0e4..5.0e5f64,
    ) {
        let q = DesignQuery { grid: TimeGrid::fixed_tau(1, 10.0), ..query(cov, Hypothesis::Ldd, 0.6, 1, 0.05) };
        let cost = CostSpec { c1, kappa, constraint: CostConstraint::Budget { total } };
        let sol = solve_allocation(&q, &cost, RBounds { lo: 1, hi: 15 }).unwrap();
        prop_assert!(sol.cost <= total * (1.0 + 1e-12));
        prop_assert!(study_cost(sol.n_opt + 1, sol.r_opt, c1, kappa) > total);
    }

    #[test]
    fn power_floor_solution_meets_the_floor(
        cov in any_cov(), kappa in 1.0..40.0f64, pi in 0.5..0.95f64,
    ) {
        let q = DesignQuery { grid: TimeGrid::fixed_tau(1, 10.0), ..query(cov, Hypothesis::Ldd, 0.4, 1, 0.05) };
        let cost = CostSpec { c1: 50.0, kappa, constraint: CostConstraint::PowerFloor { pi } };
        let sol = solve_allocation(&q, &cost, RBounds { lo: 1, hi: 12 }).unwrap();
        prop_assert!(sol.power >= pi - 1e-12);
        prop_assert!(power(sol.n_opt - 1, &q.with_r(sol.r_opt)).unwrap() < pi);
    }

    #[test]
    fn dropout_inflation_covers_the_losses(n in 2u64..100_000, f in 0.0..0.9f64) {
        let m = inflate_for_dropout(n, f).unwrap();
        prop_assert!(m >= n);
        prop_assert!(m as f64 * (1.0 - f) >= n as f64 - 1e-6);
        prop_assert!(((m - 1) as f64) * (1.0 - f) < n as f64 + 1e-6);
    }

    #[test]
    fn scenarios_round_trip_through_json(cov in any_cov(), ldd in any::<bool>(), pe in 0.05..0.95f64, r in 1u32..10) {
        let hyp = if ldd { Hypothesis::Ldd } else { Hypothesis::Cmd };
        let mut s = Scenario::new(query(cov, hyp, pe, r, 0.3));
        s.power = Some(0.8);
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, s);
    }
}
