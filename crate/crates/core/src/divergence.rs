//! Closed-form Rényi divergence between one-dimensional Gaussians and the
//! privacy loss of the additive Gaussian mechanism under Gaussian priors.
//!
//! All divergences are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance on the noise variance returned by the
/// bisection calibrators.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Order used by [`kl_limit_check`] to approach the KL limit.
pub const KL_LIMIT_ORDER: f64 = 1.0 + 1e-5;

/// A secret-conditioned Gaussian prior `N(mu, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior", into = "RawPrior")]
pub struct GaussianPrior {
    mu: f64,
    var: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPrior {
    mu: f64,
    var: f64,
}

impl TryFrom<RawPrior> for GaussianPrior {
    type Error = Error;
    fn try_from(raw: RawPrior) -> Result<Self> {
        GaussianPrior::new(raw.mu, raw.var)
    }
}

impl From<GaussianPrior> for RawPrior {
    fn from(p: GaussianPrior) -> Self {
        RawPrior { mu: p.mu, var: p.var }
    }
}

impl GaussianPrior {
    /// Zero and negative variances are rejected; the divergence formulas are
    /// singular there.
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Param(format!("prior mean must be finite, got {mu}")));
        }
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::Param(format!(
                "prior variance must be finite and positive, got {var}"
            )));
        }
        Ok(Self { mu, var })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    /// Distribution of `X + N(0, theta_sq)` for `X` drawn from this prior.
    pub fn noised(&self, theta_sq: f64) -> Result<Self> {
        if !(theta_sq >= 0.0) {
            return Err(Error::Param(format!(
                "noise variance must be non-negative, got {theta_sq}"
            )));
        }
        Self::new(self.mu, self.var + theta_sq)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let d = x - self.mu;
        -0.5 * (d * d / self.var + self.var.ln() + (2.0 * std::f64::consts::PI).ln())
    }
}

/// Rényi order, privacy budget and the bisection tolerance on `theta^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyTarget {
    alpha: f64,
    epsilon: f64,
    tol: f64,
}

impl PrivacyTarget {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        Self::with_tol(alpha, epsilon, DEFAULT_TOL)
    }

    pub fn with_tol(alpha: f64, epsilon: f64, tol: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Param(format!(
                "privacy budget epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::Param(format!("tolerance must be positive, got {tol}")));
        }
        Ok(Self {
            alpha,
            epsilon,
            tol,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 1.0 {
        Ok(())
    } else {
        Err(Error::Param(format!(
            "Renyi order alpha must be finite and > 1, got {alpha}"
        )))
    }
}

/// The two priors of a secret pair, `p` for `s_i` and `q` for `s_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPair {
    pub p: GaussianPrior,
    pub q: GaussianPrior,
}

impl GaussianPair {
    pub fn new(p: GaussianPrior, q: GaussianPrior) -> Self {
        Self { p, q }
    }

    /// `q.var - p.var`.
    pub fn delta(&self) -> f64 {
        self.q.var - self.p.var
    }

    /// `(p.mu - q.mu)^2`.
    pub fn sq_mean_gap(&self) -> f64 {
        let d = self.p.mu - self.q.mu;
        d * d
    }

    /// `(1 - alpha) p.var + alpha q.var`, the variance-like quantity that has
    /// to stay positive (after adding the noise) for the divergence to exist.
    pub fn a_of_alpha(&self, alpha: f64) -> f64 {
        self.p.var + alpha * self.delta()
    }

    pub fn noised(&self, theta_sq: f64) -> Result<Self> {
        Ok(Self {
            p: self.p.noised(theta_sq)?,
            q: self.q.noised(theta_sq)?,
        })
    }
}

/// `D_alpha(p || q)` for two Gaussians.
///
/// The variance term is evaluated as
/// `(alpha ln(1 + nu) - ln(1 + alpha nu)) / (2 (alpha - 1))` with
/// `nu = (q.var - p.var) / p.var`, which keeps it accurate for nearly equal
/// variances and large orders.
pub fn renyi_gaussian(alpha: f64, p: &GaussianPrior, q: &GaussianPrior) -> Result<f64> {
    check_alpha(alpha)?;
    if p == q {
        return Ok(0.0);
    }
    let sigma_alpha_sq = p.var + alpha * (q.var - p.var);
    if !(sigma_alpha_sq > 0.0) {
        return Err(Error::Domain(format!(
            "(1 - alpha) p.var + alpha q.var = {sigma_alpha_sq} is not positive (alpha = {alpha}, p.var = {}, q.var = {})",
            p.var, q.var
        )));
    }
    let gap = p.mu - q.mu;
    let mean_term = alpha * gap * gap / (2.0 * sigma_alpha_sq);
    let nu = (q.var - p.var) / p.var;
    let var_term = (alpha * nu.ln_1p() - (alpha * nu).ln_1p()) / (2.0 * (alpha - 1.0));
    // Both terms are non-negative; rounding can push the second a hair below zero.
    Ok(mean_term + var_term.max(0.0))
}

fn check_noise(theta_sq: f64, alpha: f64, pair: &GaussianPair) -> Result<()> {
    if !(theta_sq >= 0.0) || !theta_sq.is_finite() {
        return Err(Error::Param(format!(
            "noise variance must be finite and non-negative, got {theta_sq}"
        )));
    }
    let shifted = theta_sq + pair.a_of_alpha(alpha);
    if !(shifted > 0.0) {
        return Err(Error::Domain(format!(
            "theta^2 + A(alpha) = {shifted} is not positive; the divergence is undefined"
        )));
    }
    Ok(())
}

/// Privacy loss `g(theta^2)`: the divergence between the two priors after
/// adding `N(0, theta_sq)` to both.
pub fn privacy_loss_g(theta_sq: f64, alpha: f64, pair: &GaussianPair) -> Result<f64> {
    check_alpha(alpha)?;
    check_noise(theta_sq, alpha, pair)?;
    let noised = pair.noised(theta_sq)?;
    renyi_gaussian(alpha, &noised.p, &noised.q)
}

/// The same privacy loss written out term by term in the noise variance,
/// without building the noised priors. Kept as a second evaluation path for
/// cross-checking [`privacy_loss_g`].
pub fn privacy_loss_direct(theta_sq: f64, alpha: f64, pair: &GaussianPair) -> Result<f64> {
    check_alpha(alpha)?;
    check_noise(theta_sq, alpha, pair)?;
    let z_a = theta_sq + (1.0 - alpha) * pair.p.var + alpha * pair.q.var;
    let z_i = theta_sq + pair.p.var;
    let z_j = theta_sq + pair.q.var;
    let first = alpha * pair.sq_mean_gap() / (2.0 * z_a);
    let log_ratio = z_a.ln() - (1.0 - alpha) * z_i.ln() - alpha * z_j.ln();
    Ok(first + log_ratio / (2.0 * (1.0 - alpha)))
}

/// `D_alpha` at an order just above one, for comparing against the
/// closed-form Gaussian KL divergence.
pub fn kl_limit_check(p: &GaussianPrior, q: &GaussianPrior) -> Result<f64> {
    renyi_gaussian(KL_LIMIT_ORDER, p, q)
}

/// Closed-form `KL(p || q)` between Gaussians.
pub fn kl_gaussian(p: &GaussianPrior, q: &GaussianPrior) -> f64 {
    let gap = p.mu - q.mu;
    0.5 * ((q.var / p.var).ln() + (p.var + gap * gap) / q.var - 1.0)
}
