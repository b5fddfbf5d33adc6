//! Adaptive composite Gauss–Legendre quadrature.
//!
//! The interval is split into `2^level` equal panels, each integrated with a
//! fixed-order Gauss–Legendre rule. Levels are refined until two successive
//! estimates agree to the requested absolute tolerance.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Points per panel.
pub const PANEL_ORDER: usize = 16;

/// Hard cap on panel doublings.
pub const MAX_LEVELS: u32 = 20;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Roots are found by Newton iteration on the three-term recurrence.
pub fn gauss_legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_rule(PANEL_ORDER))
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: Complex64,
    /// Difference between the last two refinement levels.
    pub error_estimate: f64,
    pub panels: usize,
}

/// Composite rule with a fixed number of panels.
pub fn integrate_panels<F>(f: &F, a: f64, b: f64, panels: usize) -> Complex64
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    let (nodes, weights) = panel_rule();
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        let mut panel = Complex64::new(0.0, 0.0);
        for (x, w) in nodes.iter().zip(weights) {
            panel += f(mid + half * x) * *w;
        }
        acc += panel * half;
    }
    acc
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Fails with [`Error::QuadratureNonConvergence`] after [`MAX_LEVELS`]
/// doublings, carrying the last achieved difference.
pub fn integrate<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<Integral>
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    if a == b {
        return Ok(Integral {
            value: Complex64::new(0.0, 0.0),
            error_estimate: 0.0,
            panels: 0,
        });
    }
    let mut prev = integrate_panels(f, a, b, 1);
    let mut last_diff = f64::INFINITY;
    for level in 1..=MAX_LEVELS {
        let panels = 1usize << level;
        let cur = integrate_panels(f, a, b, panels);
        last_diff = (cur - prev).norm();
        if last_diff < tol {
            return Ok(Integral {
                value: cur,
                error_estimate: last_diff,
                panels,
            });
        }
        prev = cur;
    }
    Err(Error::QuadratureNonConvergence {
        achieved: last_diff,
        requested: tol,
    })
}

/// Real-valued convenience wrapper around [`integrate`].
pub fn integrate_real<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let g = |x: f64| Complex64::new(f(x), 0.0);
    integrate(&g, a, b, tol).map(|r| r.value.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rule_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre_rule(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn rule_is_exact_for_polynomials_up_to_2n_minus_1() {
        let (x, w) = gauss_legendre_rule(5);
        for deg in 0..10 {
            let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert_abs_diff_eq!(num, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn oscillatory_integral() {
        let f = |t: f64| Complex64::new(0.0, 40.0 * t).exp();
        let r = integrate(&f, 0.0, 3.0, 1e-12).unwrap();
        let exact = (Complex64::new(0.0, 120.0).exp() - 1.0) / Complex64::new(0.0, 40.0);
        assert!((r.value - exact).norm() < 1e-11);
    }

    #[test]
    fn reports_non_convergence() {
        // integrable singularity that panel doubling cannot resolve to 1e-15
        let f = |t: f64| Complex64::new(t.abs().powf(-0.9), 0.0);
        let err = integrate(&f, -1.0, 1.0, 1e-15).unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
    }
}
