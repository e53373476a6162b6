//! Minimal noise variance for a pair of single-Gaussian priors.
//!
//! Three calibrators are provided:
//!
//! * [`calibrate_exact`] bisects the exact privacy loss `g(theta^2)`, which
//!   is non-increasing in the noise variance, for its root at the budget.
//! * [`calibrate_closed_form`] solves a quadratic obtained by bounding the
//!   log-variance term of `g` from above with `ln(1 + x) <= x` and
//!   `ln(1 + x) >= x / (1 + x)`. It is always sufficient and never smaller
//!   than the exact value.
//! * [`calibrate_symmetric`] covers equal prior variances, where the two
//!   coincide and `theta^2 = alpha * gap^2 / (2 eps) - var`.

use serde::{Deserialize, Serialize};

use crate::divergence::{check_alpha, privacy_loss_g, GaussianPair, PrivacyTarget};
use crate::error::{Error, Result};
use crate::search::bisect_min_feasible;

/// How a [`CalibrationResult`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    ExactBinarySearch,
    ClosedForm,
    SymmetricClosedForm,
    /// The priors already satisfy the budget at the smallest admissible
    /// noise variance.
    NoNoiseNeeded,
    GmmTransport,
    WassersteinBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_sq: f64,
    pub method: CalibrationMethod,
    /// Divergence (or certified divergence bound) at `theta_sq`, in nats.
    pub achieved_divergence: f64,
    /// Final bracket width of a bisection, if one ran.
    pub bracket_width_final: Option<f64>,
}

impl CalibrationResult {
    /// Noise standard deviation.
    pub fn theta(&self) -> f64 {
        self.theta_sq.sqrt()
    }
}

/// Direction in which the closed-form noise variance moves as the Rényi
/// order grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaTrend {
    Increasing,
    Decreasing,
}

/// Smallest noise variance at which `g` is defined: zero when
/// `A(alpha) > 0`, otherwise just above `-A(alpha)`.
pub fn domain_floor(pair: &GaussianPair, alpha: f64) -> f64 {
    let a = pair.a_of_alpha(alpha);
    if a > 0.0 {
        0.0
    } else {
        nudge_above(-a)
    }
}

/// `x + 1e-12`, or the next few representable values when `x` is so large
/// that adding `1e-12` would be lost.
pub(crate) fn nudge_above(x: f64) -> f64 {
    let bumped = x + 1e-12_f64.max(x.abs() * 8.0 * f64::EPSILON);
    debug_assert!(bumped > x);
    bumped
}

/// Bisection on the exact privacy loss.
pub fn calibrate_exact(pair: &GaussianPair, target: &PrivacyTarget) -> Result<CalibrationResult> {
    let alpha = target.alpha();
    let eps = target.epsilon();
    let floor = domain_floor(pair, alpha);
    let at_floor = privacy_loss_g(floor, alpha, pair)?;
    if at_floor <= eps {
        return Ok(CalibrationResult {
            theta_sq: floor,
            method: CalibrationMethod::NoNoiseNeeded,
            achieved_divergence: at_floor,
            bracket_width_final: None,
        });
    }
    let upper = floor + closed_form_theta_sq(pair, alpha, eps)?;
    let found = bisect_min_feasible(floor, upper, target.tol(), eps, |z| {
        privacy_loss_g(z, alpha, pair)
    })?;
    Ok(CalibrationResult {
        theta_sq: found.theta_sq,
        method: CalibrationMethod::ExactBinarySearch,
        achieved_divergence: found.value,
        bracket_width_final: Some(found.bracket_width),
    })
}

/// The unclamped closed-form bound `x* - p.var`, where `x*` is the larger
/// root of `2 eps x^2 + alpha (2 eps delta - gap^2) x - alpha^2 delta^2 / (alpha - 1)`.
/// Negative values mean the priors need no noise under the relaxed bound.
pub fn closed_form_raw(pair: &GaussianPair, alpha: f64, epsilon: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Param(format!("epsilon must be positive, got {epsilon}")));
    }
    let delta = pair.delta();
    let a = pair.sq_mean_gap() - 2.0 * epsilon * delta;
    let b = 8.0 * epsilon * delta * delta / (alpha - 1.0);
    let root = (a * a + b).sqrt();
    // a + sqrt(a^2 + b) loses every digit when a << 0; use the conjugate form.
    let sum = if a >= 0.0 { a + root } else { b / (root - a) };
    Ok(alpha / (4.0 * epsilon) * sum - pair.p.var())
}

fn closed_form_theta_sq(pair: &GaussianPair, alpha: f64, epsilon: f64) -> Result<f64> {
    Ok(closed_form_raw(pair, alpha, epsilon)?.max(0.0))
}

/// Closed-form sufficient noise variance.
pub fn calibrate_closed_form(
    pair: &GaussianPair,
    target: &PrivacyTarget,
) -> Result<CalibrationResult> {
    let theta_sq = closed_form_theta_sq(pair, target.alpha(), target.epsilon())?;
    let achieved = privacy_loss_g(theta_sq, target.alpha(), pair)?;
    if achieved > target.epsilon() + 1e-9 {
        log::warn!(
            "closed-form noise variance {theta_sq} gives divergence {achieved} above budget {}",
            target.epsilon()
        );
    }
    Ok(CalibrationResult {
        theta_sq,
        method: CalibrationMethod::ClosedForm,
        achieved_divergence: achieved,
        bracket_width_final: None,
    })
}

/// Equal-variance calibration from the squared mean gap and the shared
/// prior variance.
pub fn calibrate_symmetric(
    mu_gap_sq: f64,
    var: f64,
    target: &PrivacyTarget,
) -> Result<CalibrationResult> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Param(format!("shared variance must be positive, got {var}")));
    }
    if !(mu_gap_sq >= 0.0 && mu_gap_sq.is_finite()) {
        return Err(Error::Param(format!(
            "squared mean gap must be non-negative, got {mu_gap_sq}"
        )));
    }
    let alpha = target.alpha();
    let theta_sq = (alpha * mu_gap_sq / (2.0 * target.epsilon()) - var).max(0.0);
    Ok(CalibrationResult {
        theta_sq,
        method: CalibrationMethod::SymmetricClosedForm,
        achieved_divergence: alpha * mu_gap_sq / (2.0 * (var + theta_sq)),
        bracket_width_final: None,
    })
}

/// Upper bound on `g(theta^2)` that the closed form inverts:
/// `(alpha gap^2 + alpha^2 delta^2 / ((alpha - 1) x)) / (2 (x + alpha delta))`
/// with `x = p.var + theta^2`.
pub fn relaxed_bound(theta_sq: f64, alpha: f64, pair: &GaussianPair) -> Result<f64> {
    check_alpha(alpha)?;
    let x = pair.p.var() + theta_sq;
    let delta = pair.delta();
    let shifted = x + alpha * delta;
    if !(theta_sq >= 0.0) || !(shifted > 0.0) {
        return Err(Error::Domain(format!(
            "relaxed bound undefined at theta^2 = {theta_sq}"
        )));
    }
    let inner = alpha * pair.sq_mean_gap() + alpha * alpha * delta * delta / ((alpha - 1.0) * x);
    Ok(inner / (2.0 * shifted))
}

/// Signed distance of the squared mean gap from the threshold separating the
/// two trends: positive means the noise variance grows with `alpha`.
pub fn alpha_sign_margin(pair: &GaussianPair, epsilon: f64, alpha: f64) -> f64 {
    let delta = pair.delta();
    let threshold = 2.0 * epsilon * delta
        + (2.0 - alpha) / (alpha - 1.0) * (2.0 * epsilon).sqrt() * delta.abs();
    pair.sq_mean_gap() - threshold
}

/// Whether the closed-form noise variance increases or decreases with the
/// Rényi order at `alpha`. Exactly on the threshold the result is
/// `Decreasing`.
pub fn alpha_monotonicity_sign(pair: &GaussianPair, epsilon: f64, alpha: f64) -> AlphaTrend {
    if alpha_sign_margin(pair, epsilon, alpha) > 0.0 {
        AlphaTrend::Increasing
    } else {
        AlphaTrend::Decreasing
    }
}
