//! One-dimensional quadrature used by the damping calculus and the
//! trajectory post-processing.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;
const INITIAL_PANELS: usize = 16;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The absolute target is `rel_tol * |I|` where `I` is a coarse composite
/// estimate; subintervals are refined until the Richardson error estimate
/// meets their share of the budget.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    // Seed the absolute budget from a 16-panel composite estimate and recurse
    // on each panel, so features narrower than the interval are not skipped.
    let seed = composite_simpson(&f, a, b, INITIAL_PANELS).abs();
    let abs_tol = (rel_tol * seed).max(f64::MIN_POSITIVE);
    let panel_tol = abs_tol / INITIAL_PANELS as f64;
    let mut worst = 0.0_f64;
    let h = (b - a) / INITIAL_PANELS as f64;
    let mut value = 0.0;
    for i in 0..INITIAL_PANELS {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == INITIAL_PANELS { b } else { lo + h };
        let (flo, fhi) = (f(lo), f(hi));
        let fm = f(0.5 * (lo + hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi);
        value += simpson_step(&f, lo, hi, flo, fm, fhi, whole, panel_tol, MAX_DEPTH, &mut worst);
    }
    if !value.is_finite() {
        return Err(Error::Numerical {
            message: format!("non-finite integrand on [{a}, {b}]"),
            achieved: f64::INFINITY,
        });
    }
    if worst > abs_tol {
        return Err(Error::Numerical {
            message: format!("adaptive Simpson did not converge on [{a}, {b}]"),
            achieved: worst / seed.max(f64::MIN_POSITIVE),
        });
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth == 0 || (m - a) <= f64::EPSILON * a.abs().max(1.0) {
        if depth == 0 {
            *worst = worst.max(delta.abs() / 15.0);
        }
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)
}

fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / (2 * panels) as f64;
    let mut sum = f(a) + f(b);
    for i in 1..2 * panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Nodes and weights of the 10-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre_10() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(10))
}

/// Newton iteration on `P_n` starting from the Chebyshev-like guesses.
fn legendre_rule(n: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    (p1, n * (x * p1 - p0) / (x * x - 1.0))
}

/// Fixed 10-point Gauss–Legendre quadrature over `[a, b]`.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre_10()
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Running trapezoid integral of samples `y` over abscissae `t`; the
/// output has the same length with a leading zero.
pub fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(t.len(), y.len());
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    if !y.is_empty() {
        out.push(0.0);
    }
    for i in 1..y.len() {
        acc += 0.5 * (t[i] - t[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}

/// Trapezoid integral of samples `y` over abscissae `t`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    cumulative_trapezoid(t, y).last().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_polynomial_and_exponential() {
        let v = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(v, 4.0, max_relative = 1e-13);
        let v = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(v, std::f64::consts::E - 1.0, max_relative = 1e-11);
    }

    #[test]
    fn simpson_sharp_peak() {
        let v = adaptive_simpson(|x| (-1e4 * (x - 0.3) * (x - 0.3)).exp(), 0.0, 1.0, 1e-10).unwrap();
        assert_relative_eq!(v, (std::f64::consts::PI / 1e4).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn simpson_reports_failure_on_singularity() {
        let err = adaptive_simpson(|x| 1.0 / x.abs().max(1e-300).sqrt().powi(3), -1.0, 1.0, 1e-12);
        assert!(matches!(err, Err(Error::Numerical { .. })));
    }

    #[test]
    fn gauss_legendre_exact_for_degree_19() {
        let v = gauss_legendre(|x| x.powi(19) + x.powi(18), -1.0, 1.0);
        assert_relative_eq!(v, 2.0 / 19.0, max_relative = 1e-13);
        let w: f64 = gauss_legendre_10().iter().map(|r| r.1).sum();
        assert_relative_eq!(w, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn triple_cumulative_trapezoid_of_one() {
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 2e-3).collect();
        let one = vec![1.0; t.len()];
        let g1 = cumulative_trapezoid(&t, &one);
        let g2 = cumulative_trapezoid(&t, &g1);
        let g3 = cumulative_trapezoid(&t, &g2);
        let tf = *t.last().unwrap();
        assert_relative_eq!(*g3.last().unwrap(), tf.powi(3) / 6.0, max_relative = 1e-5);
    }
}
