//! One-dimensional Gaussian mixture priors: maximum-likelihood fitting by EM
//! and model-order selection by BIC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::GaussianPrior;
use crate::error::{Error, Result};
use crate::mixture::{Component, Density1D};

pub const EM_TOL: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;
pub const EM_RESTARTS: u64 = 5;
const WEIGHT_TOL: f64 = 1e-9;

/// A weighted mixture prior for one secret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmDocument", into = "GmmDocument")]
pub struct GmmPrior {
    components: Vec<Component>,
}

/// On-disk form: `{"components": [{"w": .., "mu": .., "var": ..}, ..]}`.
#[derive(Serialize, Deserialize)]
struct GmmDocument {
    components: Vec<Component>,
}

impl TryFrom<GmmDocument> for GmmPrior {
    type Error = Error;
    fn try_from(doc: GmmDocument) -> Result<Self> {
        GmmPrior::new(doc.components)
    }
}

impl From<GmmPrior> for GmmDocument {
    fn from(p: GmmPrior) -> Self {
        GmmDocument {
            components: p.components,
        }
    }
}

impl GmmPrior {
    /// Weights must be non-negative and sum to one (within `1e-9`); they are
    /// renormalised exactly. Variances must be positive.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Param("a mixture needs at least one component".into()));
        }
        for c in &components {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::Param(format!("invalid mixture weight {}", c.weight)));
            }
            if !(c.var > 0.0 && c.var.is_finite() && c.mu.is_finite()) {
                return Err(Error::Param(format!("invalid component N({}, {})", c.mu, c.var)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            components: normalised(components),
        })
    }

    pub fn single(prior: GaussianPrior) -> Self {
        Self {
            components: vec![Component::new(1.0, prior.mu(), prior.var())],
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn density(&self) -> Density1D {
        Density1D::new(self.components.clone()).expect("validated on construction")
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let d = self.density();
        samples.iter().map(|&x| d.ln_pdf(x)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn normalised(mut components: Vec<Component>) -> Vec<Component> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    components
}

/// Summary of a BIC model-order search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub chosen_k: usize,
    pub bic_by_k: Vec<(usize, f64)>,
    pub log_likelihood: f64,
    pub n_samples: usize,
    pub em_iterations: usize,
    pub converged: bool,
}

/// One EM run, with the log-likelihood after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub prior: GmmPrior,
    pub log_likelihood: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn biased_moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Lower bound applied to every fitted variance.
pub fn var_floor(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 1e-6;
    }
    let (_, var) = biased_moments(samples);
    1e-6f64.max(1e-6 * var)
}

/// Local maximum-likelihood `k`-component mixture.
pub fn em_fit(samples: &[f64], k: usize, seed: u64) -> Result<(GmmPrior, f64)> {
    let run = em_fit_traced(samples, k, seed)?;
    Ok((run.prior, run.log_likelihood))
}

/// [`em_fit`], keeping the per-iteration log-likelihood trace.
///
/// Initial means come from k-means++ seeding drawn with `seed`. When every
/// sample is identical the single clamped component is returned whatever
/// `k` is.
pub fn em_fit_traced(samples: &[f64], k: usize, seed: u64) -> Result<EmRun> {
    if k == 0 {
        return Err(Error::Param("number of components must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyData("no samples to fit".into()));
    }
    if samples.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::Param(format!("sample {bad} is not finite")));
    }

    let floor = var_floor(samples);
    let (mean, var) = biased_moments(samples);
    if k == 1 || var == 0.0 {
        if k > 1 {
            log::debug!("all {} samples equal {mean}; fitting one component", samples.len());
        }
        let prior = GmmPrior {
            components: vec![Component::new(1.0, mean, var.max(floor))],
        };
        let ll = prior.log_likelihood(samples);
        return Ok(EmRun {
            prior,
            log_likelihood: ll,
            trace: vec![ll],
            iterations: 1,
            converged: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = kmeans_pp(samples, k, &mut rng);
    let mut comps = initial_components(samples, &centres, var.max(floor), floor);

    let n = samples.len();
    let mut resp = vec![0.0; n * k];
    let mut ll = e_step(samples, &comps, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EM_MAX_ITER {
        iterations += 1;
        m_step(samples, &resp, &mut comps, floor);
        let next = e_step(samples, &comps, &mut resp);
        debug_assert!(
            next >= ll - 1e-9 * ll.abs().max(1.0),
            "EM log-likelihood decreased from {ll} to {next}"
        );
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < EM_TOL {
            converged = true;
            break;
        }
    }

    Ok(EmRun {
        prior: GmmPrior {
            components: normalised(comps),
        },
        log_likelihood: ll,
        trace,
        iterations,
        converged,
    })
}

fn kmeans_pp(samples: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = samples.len();
    let mut centres = vec![samples[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = samples.iter().map(|x| (x - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            samples[pick]
        } else {
            samples[rng.random_range(0..n)]
        };
        centres.push(next);
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min((x - next).powi(2));
        }
    }
    centres
}

/// Hard-assigns samples to their nearest centre and takes cluster moments.
fn initial_components(samples: &[f64], centres: &[f64], global_var: f64, floor: f64) -> Vec<Component> {
    let k = centres.len();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for &x in samples {
        let j = (0..k)
            .min_by(|&a, &b| (x - centres[a]).abs().total_cmp(&(x - centres[b]).abs()))
            .expect("k >= 1");
        count[j] += 1;
        sum[j] += x;
        sum_sq[j] += x * x;
    }
    let n = samples.len() as f64;
    (0..k)
        .map(|j| {
            if count[j] < 2 {
                let w = (count[j].max(1)) as f64 / n;
                Component::new(w, centres[j], global_var)
            } else {
                let c = count[j] as f64;
                let mu = sum[j] / c;
                let var = (sum_sq[j] / c - mu * mu).max(floor);
                Component::new(c / n, mu, var)
            }
        })
        .collect()
}

/// Fills `resp` (row-major, `n x k`) and returns the total log-likelihood.
fn e_step(samples: &[f64], comps: &[Component], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let log_w: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
    let mut ll = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            row[j] = log_w[j] + comps[j].ln_pdf(x);
            max = max.max(row[j]);
        }
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        ll += max + s.ln();
    }
    ll
}

fn m_step(samples: &[f64], resp: &[f64], comps: &mut [Component], floor: f64) {
    let k = comps.len();
    let n = samples.len() as f64;
    for j in 0..k {
        let mut nk = 0.0;
        let mut sx = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let r = resp[i * k + j];
            nk += r;
            sx += r * x;
        }
        if nk <= 0.0 {
            // Starved component: weight goes to zero, location is irrelevant.
            comps[j].weight = 0.0;
            continue;
        }
        let mu = sx / nk;
        let mut sv = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let d = x - mu;
            sv += resp[i * k + j] * d * d;
        }
        comps[j] = Component::new(nk / n, mu, (sv / nk).max(floor));
    }
}

/// Number of distinct values among the samples.
pub fn distinct_count(samples: &[f64]) -> usize {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Free parameters of a `k`-component one-dimensional mixture.
pub fn free_parameters(k: usize) -> usize {
    3 * k - 1
}

pub fn bic(log_likelihood: f64, k: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + free_parameters(k) as f64 * (n as f64).ln()
}

fn restart_seed(seed: u64, k: usize, restart: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((k as u64) << 32)
        ^ restart.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Fits `k = 1..=K` (with `K` capped by the sample count and the number of
/// distinct values), keeping the best of several restarts for each `k`, and
/// returns the mixture minimising BIC.
pub fn fit_with_bic(samples: &[f64], k_max: usize, seed: u64) -> Result<(GmmPrior, FitReport)> {
    if samples.is_empty() {
        return Err(Error::EmptyData("no samples to fit".into()));
    }
    if k_max == 0 {
        return Err(Error::Param("k_max must be at least 1".into()));
    }
    let n = samples.len();
    let k_cap = k_max.min(n).min(distinct_count(samples));

    let fits: Vec<EmRun> = (1..=k_cap)
        .into_par_iter()
        .map(|k| {
            let restarts = if k == 1 { 1 } else { EM_RESTARTS };
            let mut best: Option<EmRun> = None;
            for r in 0..restarts {
                let run = em_fit_traced(samples, k, restart_seed(seed, k, r))?;
                if best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
                    best = Some(run);
                }
            }
            Ok(best.expect("at least one restart"))
        })
        .collect::<Result<_>>()?;

    let bic_by_k: Vec<(usize, f64)> = fits
        .iter()
        .enumerate()
        .map(|(i, run)| (i + 1, bic(run.log_likelihood, i + 1, n)))
        .collect();
    let (best_idx, _) = bic_by_k
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &(_, b))| if b < acc.1 { (i, b) } else { acc });
    let chosen = &fits[best_idx];
    let report = FitReport {
        chosen_k: best_idx + 1,
        bic_by_k,
        log_likelihood: chosen.log_likelihood,
        n_samples: n,
        em_iterations: chosen.iterations,
        converged: chosen.converged,
    };
    Ok((chosen.prior.clone(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn normal_samples(n: usize, mu: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mu, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn single_component_is_the_mle() {
        let xs = normal_samples(5000, 0.0, 1.0, 7);
        let (prior, _) = em_fit(&xs, 1, 0).unwrap();
        let (mean, var) = biased_moments(&xs);
        assert_eq!(prior.k(), 1);
        assert_eq!(prior.components()[0].mu, mean);
        assert_eq!(prior.components()[0].var, var);
    }

    #[test]
    fn two_separated_modes() {
        let mut xs = normal_samples(2500, -5.0, 1.0, 1);
        xs.extend(normal_samples(2500, 5.0, 1.0, 2));
        let (prior, _) = em_fit(&xs, 2, 42).unwrap();
        let mut comps = prior.components().to_vec();
        comps.sort_by(|a, b| a.mu.total_cmp(&b.mu));
        for (c, mu) in comps.iter().zip([-5.0, 5.0]) {
            assert!((c.weight - 0.5).abs() <= 0.03, "{c:?}");
            assert!((c.mu - mu).abs() <= 0.1, "{c:?}");
        }
    }

    #[test]
    fn constant_samples_are_clamped() {
        let xs = vec![3.25; 10];
        let (prior, _) = em_fit(&xs, 1, 0).unwrap();
        assert_eq!(prior.components()[0].mu, 3.25);
        assert_eq!(prior.components()[0].var, 1e-6);
        let (prior, _) = em_fit(&xs, 3, 0).unwrap();
        assert_eq!(prior.k(), 1);
    }

    #[test]
    fn likelihood_never_decreases() {
        let mut xs = normal_samples(800, -1.0, 0.7, 3);
        xs.extend(normal_samples(400, 2.0, 1.5, 4));
        for k in 2..=4 {
            for seed in 0..3 {
                let run = em_fit_traced(&xs, k, seed).unwrap();
                for w in run.trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "k={k}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn seeded_fits_are_bit_identical() {
        let xs = normal_samples(600, 0.0, 2.0, 11);
        let a = em_fit(&xs, 3, 9).unwrap();
        let b = em_fit(&xs, 3, 9).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn weights_sum_to_one() {
        let xs = normal_samples(700, 1.0, 3.0, 5);
        let (prior, _) = em_fit(&xs, 4, 1).unwrap();
        let total: f64 = prior.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn k_max_is_capped_by_distinct_values() {
        let (_, report) = fit_with_bic(&[1.0, 2.0], 5, 0).unwrap();
        assert_eq!(report.bic_by_k.len(), 2);
        let (_, report) = fit_with_bic(&[1.0, 1.0, 1.0, 2.0, 2.0], 5, 0).unwrap();
        assert_eq!(report.bic_by_k.len(), 2);
        assert!(matches!(fit_with_bic(&[], 3, 0), Err(Error::EmptyData(_))));
    }

    #[test]
    fn bic_choice_is_the_argmin() {
        let mut xs = normal_samples(300, -4.0, 1.0, 8);
        xs.extend(normal_samples(300, 4.0, 1.0, 9));
        let (prior, report) = fit_with_bic(&xs, 4, 3).unwrap();
        let min = report.bic_by_k.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let (k, b) = report.bic_by_k[report.chosen_k - 1];
        assert_eq!(k, report.chosen_k);
        assert_eq!(b, min);
        assert_eq!(prior.k(), report.chosen_k);
        assert_eq!(report.chosen_k, 2);
    }

    #[test]
    fn json_layout() {
        let prior = GmmPrior::new(vec![
            Component::new(0.25, -1.0, 0.5),
            Component::new(0.75, 2.0, 1.5),
        ])
        .unwrap();
        let json = serde_json::to_value(&prior).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"components": [
                {"w": 0.25, "mu": -1.0, "var": 0.5},
                {"w": 0.75, "mu": 2.0, "var": 1.5}
            ]})
        );
        assert_eq!(GmmPrior::from_json(&prior.to_json().unwrap()).unwrap(), prior);
        assert!(GmmPrior::from_json(r#"{"components":[{"w":0.5,"mu":0,"var":1}]}"#).is_err());
        assert!(GmmPrior::from_json(r#"{"components":[]}"#).is_err());
    }
}
