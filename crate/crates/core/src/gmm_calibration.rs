//! Noise calibration for mixture priors.
//!
//! Components of the two mixtures are paired by an optimal coupling of
//! their weights. Jensen's inequality over that coupling bounds the
//! divergence of the noised mixtures by
//! `ln(sum pi_kl exp(psi_kl)) / (alpha - 1)`, where `psi_kl` is
//! `(alpha - 1)` times the relaxed single-Gaussian bound for the pair
//! `(k, l)`. Each `psi_kl` is a product of two positive factors that both
//! decrease in the noise variance, so the bound is monotone and can be
//! bisected like the single-Gaussian loss.

use crate::divergence::{check_alpha, GaussianPair, GaussianPrior, PrivacyTarget};
use crate::error::{Error, Result};
use crate::gaussian::{
    closed_form_raw, nudge_above, relaxed_bound, CalibrationMethod, CalibrationResult,
};
use crate::gmm::GmmPrior;
use crate::mixture::Component;
use crate::quadrature::quadrature_divergence;
use crate::search::bisect_min_feasible;
use crate::transport::{cost_matrix, solve_ot, Coupling};

/// Slack allowed between the certified bound and the numerically integrated
/// divergence when re-checking a calibration.
pub const VERIFY_SLACK: f64 = 1e-6;

/// Two mixture priors and the coupling between their components.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPair {
    pub p: GmmPrior,
    pub q: GmmPrior,
    pub coupling: Coupling,
}

impl GmmPair {
    /// Couples the noise-free components by optimal transport under the
    /// squared 2-Wasserstein cost.
    pub fn new(p: GmmPrior, q: GmmPrior) -> Result<Self> {
        let cost = cost_matrix(p.components(), q.components());
        let coupling = solve_ot(&p.weights(), &q.weights(), &cost)?;
        Ok(Self { p, q, coupling })
    }

    /// Coupled component pairs with positive mass, as `(mass, p_k, q_l)`.
    pub fn coupled(&self) -> impl Iterator<Item = (f64, &Component, &Component)> + '_ {
        self.coupling
            .support()
            .map(|(k, l, m)| (m, &self.p.components()[k], &self.q.components()[l]))
    }
}

fn as_prior(c: &Component) -> GaussianPrior {
    GaussianPrior::new(c.mu, c.var).expect("mixture components are validated")
}

/// Exponent of one coupled pair at noise variance `theta_sq`: `alpha - 1`
/// times the relaxed single-Gaussian bound for the pair.
pub fn psi(theta_sq: f64, alpha: f64, ci: &GaussianPrior, cj: &GaussianPrior) -> Result<f64> {
    Ok((alpha - 1.0) * pair_bound(theta_sq, alpha, ci, cj)?)
}

fn pair_bound(theta_sq: f64, alpha: f64, ci: &GaussianPrior, cj: &GaussianPrior) -> Result<f64> {
    relaxed_bound(theta_sq, alpha, &GaussianPair::new(*ci, *cj))
}

/// Smallest noise variance at which every coupled `psi` is defined.
pub fn gmm_domain_floor(pair: &GmmPair, alpha: f64) -> f64 {
    let bound = pair
        .coupled()
        .map(|(_, ci, cj)| ((alpha - 1.0) * ci.var - alpha * cj.var).max(-ci.var))
        .fold(f64::NEG_INFINITY, f64::max);
    if bound < 0.0 {
        0.0
    } else {
        nudge_above(bound)
    }
}

/// Divergence bound (nats) for the noised mixtures; the budget is met when
/// this is at most `epsilon`.
pub fn gmm_condition_lhs(theta_sq: f64, alpha: f64, pair: &GmmPair) -> Result<f64> {
    check_alpha(alpha)?;
    if !(theta_sq >= 0.0) {
        return Err(Error::Domain(format!("noise variance {theta_sq} is negative")));
    }
    let terms = pair
        .coupled()
        .map(|(m, ci, cj)| Ok((m, pair_bound(theta_sq, alpha, &as_prior(ci), &as_prior(cj))?)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    // Factor out the largest pair bound so a single pair returns it exactly.
    let top = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms
        .iter()
        .map(|&(m, b)| m * ((alpha - 1.0) * (b - top)).exp())
        .sum();
    Ok(top + sum.ln() / (alpha - 1.0))
}

/// Divergence of the noised mixtures by numerical integration.
pub fn noised_quadrature(theta_sq: f64, alpha: f64, pair: &GmmPair) -> Result<f64> {
    let p = pair.p.density().noised(theta_sq);
    let q = pair.q.density().noised(theta_sq);
    quadrature_divergence(alpha, &p, &q)
}

/// Smallest noise variance (to the target tolerance) satisfying the mixture
/// condition, re-checked by quadrature.
pub fn calibrate_gmm(pair: &GmmPair, target: &PrivacyTarget) -> Result<CalibrationResult> {
    let result = calibrate_gmm_bound(pair, target)?;
    let actual = noised_quadrature(result.theta_sq, target.alpha(), pair)?;
    if actual > target.epsilon() + VERIFY_SLACK {
        return Err(Error::Convergence(format!(
            "noise variance {} certifies {} but integrates to {actual}, above budget {}",
            result.theta_sq,
            result.achieved_divergence,
            target.epsilon()
        )));
    }
    Ok(result)
}

/// [`calibrate_gmm`] without the quadrature re-check.
pub fn calibrate_gmm_bound(pair: &GmmPair, target: &PrivacyTarget) -> Result<CalibrationResult> {
    let alpha = target.alpha();
    let eps = target.epsilon();
    let floor = gmm_domain_floor(pair, alpha);
    let at_floor = gmm_condition_lhs(floor, alpha, pair)?;
    if at_floor <= eps {
        return Ok(CalibrationResult {
            theta_sq: floor,
            method: CalibrationMethod::NoNoiseNeeded,
            achieved_divergence: at_floor,
            bracket_width_final: None,
        });
    }

    let mut per_pair = 0.0f64;
    for (_, ci, cj) in pair.coupled() {
        let g = GaussianPair::new(as_prior(ci), as_prior(cj));
        per_pair = per_pair.max(closed_form_raw(&g, alpha, eps)?);
    }
    let upper = per_pair.max(floor);
    let found = bisect_min_feasible(floor, upper, target.tol(), eps, |z| {
        gmm_condition_lhs(z, alpha, pair)
    })?;
    Ok(CalibrationResult {
        theta_sq: found.theta_sq,
        method: CalibrationMethod::GmmTransport,
        achieved_divergence: found.value,
        bracket_width_final: Some(found.bracket_width),
    })
}
