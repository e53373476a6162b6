//! Numerical Rényi divergence between Gaussian mixtures by adaptive Simpson
//! integration of `p^alpha q^(1 - alpha)`.
//!
//! This path shares no formula with the closed forms in
//! [`crate::divergence`] and [`crate::gmm_calibration`]; tests use it as the
//! reference those are checked against.
//!
//! The integrand is handled in log space: it is evaluated as `exp(f(y) - s)`
//! with `s` the largest log value seen on the initial breakpoints, so
//! divergences of thousands of nats do not overflow.

use crate::divergence::check_alpha;
use crate::error::{Error, Result};
use crate::mixture::Density1D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Half-width of the integration window around every component mean,
    /// in that component's standard deviations.
    pub window_sds: f64,
    /// Target relative accuracy of the integral.
    pub rel_tol: f64,
    /// Maximum number of interval halvings along any branch.
    pub max_depth: u32,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            window_sds: 12.0,
            rel_tol: 1e-10,
            max_depth: 50,
        }
    }
}

/// Offsets (in standard deviations) around each feature that become panel
/// breakpoints, so that no peak can fall between samples.
const FEATURE_OFFSETS: [f64; 17] = [
    -12.0, -8.0, -6.0, -4.0, -3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0,
];
const MAX_PANEL_FRACTION: f64 = 1.0 / 256.0;
/// The window is widened until the integrand at its edges is below
/// `exp(-TAIL_LOG_DROP)` of the peak.
const TAIL_LOG_DROP: f64 = 60.0;
/// Integrand evaluations allowed per integral before giving up.
const MAX_EVALS: usize = 5_000_000;

/// `D_alpha(p || q) = ln(integral of p^alpha q^(1-alpha)) / (alpha - 1)`,
/// computed numerically with the default configuration.
pub fn quadrature_divergence(alpha: f64, p: &Density1D, q: &Density1D) -> Result<f64> {
    quadrature_divergence_with(&QuadratureConfig::default(), alpha, p, q)
}

pub fn quadrature_divergence_with(
    cfg: &QuadratureConfig,
    alpha: f64,
    p: &Density1D,
    q: &Density1D,
) -> Result<f64> {
    check_alpha(alpha)?;

    // The tails behave like the widest component of each mixture; the
    // integral is finite only if p's decays faster than q^(1 - alpha) grows.
    let widest = |d: &Density1D| d.components().iter().map(|c| c.var).fold(0.0, f64::max);
    let tail_precision = alpha / widest(p) - (alpha - 1.0) / widest(q);
    if !(tail_precision > 0.0) {
        return Err(Error::Domain(format!(
            "integral of p^alpha q^(1-alpha) diverges at order {alpha}"
        )));
    }

    let mut features = Vec::new();
    for c in p.components().iter().chain(q.components()) {
        features.push((c.mu, c.sd()));
    }
    // Each (p, q) component pair contributes a Gaussian-shaped bump centred
    // away from both means when the variances differ.
    for cp in p.components() {
        for cq in q.components() {
            let tau = alpha / cp.var - (alpha - 1.0) / cq.var;
            if tau > 0.0 {
                let centre = (alpha * cp.mu / cp.var - (alpha - 1.0) * cq.mu / cq.var) / tau;
                if centre.is_finite() {
                    features.push((centre, tau.recip().sqrt()));
                }
            }
        }
    }

    let log_integrand = |y: f64| alpha * p.ln_pdf(y) + (1.0 - alpha) * q.ln_pdf(y);
    let log_scale = |y: f64| alpha * p.ln_pdf(y).abs() + (alpha - 1.0) * q.ln_pdf(y).abs();
    let ln_int = ln_integral(cfg, &log_integrand, &log_scale, &features)?;
    Ok(ln_int / (alpha - 1.0))
}

/// Total mass of a mixture density, by the same integrator.
pub fn integrate_density(d: &Density1D) -> Result<f64> {
    let cfg = QuadratureConfig::default();
    let features: Vec<(f64, f64)> = d.components().iter().map(|c| (c.mu, c.sd())).collect();
    Ok(ln_integral(&cfg, &|y| d.ln_pdf(y), &|y| d.ln_pdf(y).abs(), &features)?.exp())
}

/// `ln` of the integral of `exp(log_f)` over the real line, where `log_f`
/// is concentrated around the given `(centre, scale)` features.
///
/// `log_scale(y)` is the magnitude of the terms summed inside `log_f(y)`.
/// When they nearly cancel, rounding limits the relative accuracy of each
/// integrand value to about `log_scale * EPSILON`; a subinterval whose
/// refinement changes less than that is accepted.
fn ln_integral(
    cfg: &QuadratureConfig,
    log_f: &dyn Fn(f64) -> f64,
    log_scale: &dyn Fn(f64) -> f64,
    features: &[(f64, f64)],
) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(c, s) in features {
        lo = lo.min(c - cfg.window_sds * s);
        hi = hi.max(c + cfg.window_sds * s);
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::Convergence(format!("degenerate integration window [{lo}, {hi}]")));
    }

    let mut points: Vec<f64> = features
        .iter()
        .flat_map(|&(c, s)| FEATURE_OFFSETS.iter().map(move |k| c + k * s))
        .collect();
    let mut shift = points
        .iter()
        .map(|&y| log_f(y))
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::Convergence("integrand vanishes on every breakpoint".into()));
    }

    let mut grown = 0;
    while log_f(lo) - shift > -TAIL_LOG_DROP || log_f(hi) - shift > -TAIL_LOG_DROP {
        let w = hi - lo;
        lo -= 0.5 * w;
        hi += 0.5 * w;
        grown += 1;
        if grown > 40 {
            return Err(Error::Convergence("integrand tails do not decay".into()));
        }
    }

    points.push(lo);
    points.push(hi);
    points.retain(|y| *y >= lo && *y <= hi);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let max_gap = (hi - lo) * MAX_PANEL_FRACTION;
    let mut edges = Vec::with_capacity(points.len() * 2);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = ((b - a) / max_gap).ceil().max(1.0) as usize;
        for i in 0..pieces {
            edges.push(a + (b - a) * i as f64 / pieces as f64);
        }
    }
    edges.push(hi);

    // Refine the shift on the full panel grid before scaling.
    let (mut peak, mut peak_value) = (lo, f64::NEG_INFINITY);
    for &y in &edges {
        let v = log_f(y);
        if v > peak_value {
            (peak, peak_value) = (y, v);
        }
    }
    shift = shift.max(peak_value);
    // Relative rounding noise of the integrand near its peak.
    let noise = (16.0 * f64::EPSILON * log_scale(peak)).max(1e-15);
    let f = |y: f64| (log_f(y) - shift).exp();

    let mut panels = Vec::with_capacity(edges.len());
    let mut coarse = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        coarse += whole;
        panels.push((a, b, fa, fm, fb, whole));
    }
    if !(coarse > 0.0) {
        return Err(Error::Convergence("integrand is numerically zero".into()));
    }

    let abs_tol = cfg.rel_tol * coarse;
    let span = hi - lo;
    let mut total = 0.0;
    let mut budget = MAX_EVALS;
    for (a, b, fa, fm, fb, whole) in panels {
        let eps = abs_tol * (b - a) / span;
        total += adaptive_simpson(&f, a, b, fa, fm, fb, whole, eps, noise, cfg.max_depth, &mut budget)?;
    }
    Ok(shift + total.ln())
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    noise: f64,
    depth: u32,
    budget: &mut usize,
) -> Result<f64> {
    if *budget < 2 {
        return Err(Error::Convergence("integrand evaluation budget exhausted".into()));
    }
    *budget -= 2;
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * eps || delta.abs() <= noise * (left + right).abs() {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Convergence(format!(
            "no convergence on [{a}, {b}] after the maximum number of halvings"
        )));
    }
    Ok(adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * eps, noise, depth - 1, budget)?
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * eps, noise, depth - 1, budget)?)
}
