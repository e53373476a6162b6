//! Weighted sums of one-dimensional Gaussians, evaluated in log space.

use serde::{Deserialize, Serialize};

use crate::divergence::GaussianPrior;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// One weighted Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    #[serde(rename = "w")]
    pub weight: f64,
    pub mu: f64,
    pub var: f64,
}

impl Component {
    pub fn new(weight: f64, mu: f64, var: f64) -> Self {
        Self { weight, mu, var }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    /// Log density of the (unweighted) component.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let d = x - self.mu;
        -0.5 * d * d / self.var - 0.5 * self.var.ln() - LN_SQRT_2PI
    }
}

/// `ln(sum(exp(xs)))` without overflow. Returns `-inf` for an empty slice or
/// when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A density on the real line given as a finite Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    components: Vec<Component>,
}

impl Density1D {
    /// Components with zero weight are dropped. Weights must be non-negative
    /// and sum to one within `1e-9`; variances must be positive.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let mut kept = Vec::with_capacity(components.len());
        let mut total = 0.0;
        for c in components {
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::Param(format!("mixture weight {} is invalid", c.weight)));
            }
            if !(c.var > 0.0 && c.var.is_finite()) || !c.mu.is_finite() {
                return Err(Error::Param(format!(
                    "mixture component N({}, {}) is invalid",
                    c.mu, c.var
                )));
            }
            total += c.weight;
            if c.weight > 0.0 {
                kept.push(c);
            }
        }
        if kept.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { components: kept })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// The mixture after convolving with `N(0, theta_sq)`.
    pub fn noised(&self, theta_sq: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| Component::new(c.weight, c.mu, c.var + theta_sq))
                .collect(),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self.components.as_slice() {
            [c] => c.ln_pdf(x),
            cs => {
                let mut max = f64::NEG_INFINITY;
                let mut terms = [0.0f64; 16];
                if cs.len() <= terms.len() {
                    for (t, c) in terms.iter_mut().zip(cs) {
                        *t = c.weight.ln() + c.ln_pdf(x);
                        max = max.max(*t);
                    }
                    let s: f64 = terms[..cs.len()].iter().map(|t| (t - max).exp()).sum();
                    max + s.ln()
                } else {
                    let v: Vec<f64> = cs.iter().map(|c| c.weight.ln() + c.ln_pdf(x)).collect();
                    log_sum_exp(&v)
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

impl From<GaussianPrior> for Density1D {
    fn from(p: GaussianPrior) -> Self {
        Self {
            components: vec![Component::new(1.0, p.mu(), p.var())],
        }
    }
}

impl From<&GaussianPrior> for Density1D {
    fn from(p: &GaussianPrior) -> Self {
        Self::from(*p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[-1000.0, 0.0]) - 0.0).abs() < 1e-300);
    }

    #[test]
    fn mixture_density_matches_direct_sum() {
        let d = Density1D::new(vec![
            Component::new(0.3, -1.0, 0.5),
            Component::new(0.7, 2.0, 1.5),
        ])
        .unwrap();
        let x = 0.25;
        let direct: f64 = d
            .components()
            .iter()
            .map(|c| c.weight * c.ln_pdf(x).exp())
            .sum();
        assert!((d.pdf(x) - direct).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(Density1D::new(vec![Component::new(0.5, 0.0, 1.0)]).is_err());
        assert!(Density1D::new(vec![Component::new(1.0, 0.0, 0.0)]).is_err());
        assert!(Density1D::new(vec![
            Component::new(-0.5, 0.0, 1.0),
            Component::new(1.5, 0.0, 1.0)
        ])
        .is_err());
    }
}
