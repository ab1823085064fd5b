//! Fit-then-check helpers for asymptotic bound verification.
//!
//! The source estimates come with unknowable constants, so every `O(...)`
//! claim is turned into a testable assertion the same way: fit the constant
//! on a few early levels, then require the bound to hold with that constant
//! on all later levels.

use crate::numerics::Real;

/// Result of a fit-then-check run.
#[derive(Clone, Debug)]
pub struct TrendReport {
    /// Constant fitted as `max value/envelope` over the fit range.
    pub fitted_k: f64,
    /// `(level, value/envelope)` for every checked level.
    pub ratios: Vec<(usize, f64)>,
    /// Levels (from the check range) where the fitted bound failed.
    pub violations: Vec<usize>,
}

impl TrendReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fit `K = max |value|/envelope` over `fit` levels, then check
/// `|value| <= K * envelope` over `check` levels.
///
/// `pairs` holds `(level, value, envelope)` with positive envelopes.
pub fn fit_then_check(
    pairs: &[(usize, Real, Real)],
    fit: std::ops::RangeInclusive<usize>,
    check: std::ops::RangeInclusive<usize>,
) -> TrendReport {
    let ratio_at = |value: &Real, env: &Real| -> f64 { (&value.abs() / env).to_f64() };
    let mut fitted_k = 0.0f64;
    for (n, value, env) in pairs {
        if fit.contains(n) {
            fitted_k = fitted_k.max(ratio_at(value, env));
        }
    }
    let mut ratios = Vec::new();
    let mut violations = Vec::new();
    for (n, value, env) in pairs {
        let r = ratio_at(value, env);
        ratios.push((*n, r));
        if check.contains(n) && r > fitted_k {
            violations.push(*n);
        }
    }
    TrendReport { fitted_k, ratios, violations }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_then_check_flags_growth() {
        let mk = |v: f64| Real::from_f64(v, 64);
        // value/envelope ratios: 1, 1, 1, then a spike at level 4
        let pairs: Vec<(usize, Real, Real)> =
            vec![(1, mk(0.5), mk(0.5)), (2, mk(0.3), mk(0.3)), (3, mk(0.2), mk(0.2)), (4, mk(0.9), mk(0.1))];
        let rep = fit_then_check(&pairs, 1..=2, 3..=4);
        assert!((rep.fitted_k - 1.0).abs() < 1e-12);
        assert_eq!(rep.violations, vec![4]);
        assert!(!rep.passed());
        let rep2 = fit_then_check(&pairs[..3], 1..=2, 3..=3);
        assert!(rep2.passed());
    }

    #[test]
    fn regression_recovers_a_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.25 * x - 1.5).collect();
        let (slope, intercept) = linear_regression(&xs, &ys);
        assert!((slope - 3.25).abs() < 1e-12);
        assert!((intercept + 1.5).abs() < 1e-12);
    }
}
