//! Gauss–Hermite rules for expectations over a normal distribution.
//!
//! Nodes and weights come from the Golub–Welsch eigenvalue method applied
//! to the symmetric tridiagonal Jacobi matrix of the physicists' Hermite
//! polynomials.  Rules are cached per node count.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for `∫ f(x) exp(-x²) dx ≈ Σ w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule {
    /// Abscissae in increasing order.
    pub nodes: Vec<f64>,
    /// Positive weights summing to `sqrt(pi)`.
    pub weights: Vec<f64>,
}

impl HermiteRule {
    /// Builds an `n`-point rule.
    ///
    /// # Panics
    /// Panics if `n == 0`.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "a quadrature rule needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mu0 = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], mu0 * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // The rule is symmetric about zero; enforce it exactly.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[j].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[j] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        HermiteRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Cached rule with `n` nodes.
    pub fn cached(n: usize) -> Arc<HermiteRule> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<HermiteRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard.entry(n).or_insert_with(|| Arc::new(HermiteRule::new(n))).clone()
    }

    /// Approximates `E[f(X)]` for `X ~ Normal(mean, sd²)`.
    ///
    /// ```
    /// use longidesign::quadrature::HermiteRule;
    /// let rule = HermiteRule::new(10);
    /// let m2 = rule.expect_normal(1.0, 2.0, |x| x * x);
    /// assert!((m2 - 5.0).abs() < 1e-12);
    /// ```
    pub fn expect_normal<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut f: F) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let norm = std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mean + scale * x))
            .sum::<f64>()
            / norm
    }

    /// Points and probability weights (summing to one) for
    /// `Normal(mean, sd²)`.
    pub fn normal_points(&self, mean: f64, sd: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = std::f64::consts::SQRT_2 * sd;
        let norm = std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mean + scale * x, w / norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 40, 80, 160, 320] {
            let rule = HermiteRule::new(n);
            let s: f64 = rule.weights.iter().sum();
            assert_relative_eq!(s, std::f64::consts::PI.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn normal_moments_are_exact() {
        // E[X^4] = 3 sd^4 for a centred normal; odd moments vanish.
        let rule = HermiteRule::cached(40);
        assert_relative_eq!(rule.expect_normal(0.0, 1.5, |x| x.powi(4)), 3.0 * 1.5_f64.powi(4), max_relative = 1e-12);
        assert!(rule.expect_normal(0.0, 1.5, |x| x.powi(3)).abs() < 1e-12);
        // E[X^2] = mean^2 + sd^2.
        assert_relative_eq!(rule.expect_normal(-2.0, 0.5, |x| x * x), 4.25, max_relative = 1e-12);
    }

    #[test]
    fn two_point_rule() {
        let rule = HermiteRule::new(2);
        assert_relative_eq!(rule.nodes[1], 0.5_f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(rule.weights[0], std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn smooth_rational_integrand_converges() {
        // E[1 / (1 + X^2)] for X ~ N(0, 1) = sqrt(pi/2) e^{1/2} erfc(1/sqrt 2).
        let exact = 0.655_679_542_418_798_6;
        let v = HermiteRule::cached(320).expect_normal(0.0, 1.0, |x| 1.0 / (1.0 + x * x));
        assert!((v - exact).abs() < 1e-9);
    }
}
