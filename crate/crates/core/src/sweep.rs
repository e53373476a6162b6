//! Calibration over (alpha, epsilon) grids, the CSV and SVG emitters, and the
//! baseline comparison summary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_scenario, mean_query_prior_clamped, raw_query_prior, winf_baseline_theta, QuerySpec,
    ScenarioFile,
};
use crate::divergence::{check_alpha, GaussianPair, GaussianPrior, PrivacyTarget};
use crate::error::{Error, Result};
use crate::gaussian::{calibrate_closed_form, calibrate_exact, CalibrationResult};
use crate::gmm::{em_fit, FitReport, GmmPrior};
use crate::gmm_calibration::{calibrate_gmm, GmmPair};

/// Calibrator selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    ClosedForm,
    Gmm,
    Baseline,
    All,
}

impl Method {
    pub const CONCRETE: [Method; 4] = [Method::Exact, Method::ClosedForm, Method::Gmm, Method::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::ClosedForm => "closed_form",
            Method::Gmm => "gmm",
            Method::Baseline => "baseline",
            Method::All => "all",
        }
    }

    /// Concrete methods to run. `All` skips the baseline when no samples
    /// are available for it.
    pub fn expand(self, baseline_available: bool) -> Vec<Method> {
        match self {
            Method::All => Self::CONCRETE
                .into_iter()
                .filter(|m| *m != Method::Baseline || baseline_available)
                .collect(),
            m => vec![m],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "exact" => Ok(Method::Exact),
            "closed_form" | "closed" => Ok(Method::ClosedForm),
            "gmm" => Ok(Method::Gmm),
            "baseline" => Ok(Method::Baseline),
            "all" => Ok(Method::All),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected exact, closed_form, gmm, baseline or all)"
            ))),
        }
    }
}

/// Priors for one secret pair under one query, in every form the
/// calibrators need.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Single-Gaussian priors used by the exact and closed-form calibrators.
    pub gaussian: GaussianPair,
    /// Mixture priors and their coupling.
    pub gmm: GmmPair,
    /// Raw samples for the baseline, when the query is data-backed.
    pub baseline: Option<(Vec<f64>, Vec<f64>)>,
    pub fit_reports: Option<(FitReport, FitReport)>,
}

impl Problem {
    pub fn from_gaussians(i: GaussianPrior, j: GaussianPrior) -> Result<Self> {
        Ok(Self {
            gaussian: GaussianPair::new(i, j),
            gmm: GmmPair::new(GmmPrior::single(i), GmmPrior::single(j))?,
            baseline: None,
            fit_reports: None,
        })
    }

    /// Loads data as needed and builds the priors for `query`.
    ///
    /// `Raw` uses moment-matched Gaussians for the single-Gaussian
    /// calibrators and BIC-selected mixtures (or `cached` ones) for the
    /// mixture calibrator. `Mean` uses the Gaussian approximation of the
    /// sample mean throughout.
    pub fn build(
        file: &ScenarioFile,
        query: QuerySpec,
        k_max: usize,
        seed: u64,
        cached: Option<(GmmPrior, GmmPrior)>,
    ) -> Result<Self> {
        match query {
            QuerySpec::ExternalGaussian { i, j } => Self::from_gaussians(i, j),
            QuerySpec::Mean => {
                let data = load_scenario(file.require_scenario()?)?;
                let mut problem = Self::from_gaussians(
                    mean_query_prior_clamped(&data.i)?,
                    mean_query_prior_clamped(&data.j)?,
                )?;
                problem.baseline = Some((data.i, data.j));
                Ok(problem)
            }
            QuerySpec::Raw => {
                let data = load_scenario(file.require_scenario()?)?;
                let moment = |xs: &[f64]| -> Result<GaussianPrior> {
                    let (fit, _) = em_fit(xs, 1, seed)?;
                    let c = fit.components()[0];
                    GaussianPrior::new(c.mu, c.var)
                };
                let gaussian = GaussianPair::new(moment(&data.i)?, moment(&data.j)?);
                let (gi, gj, reports) = match cached {
                    Some((gi, gj)) => (gi, gj, None),
                    None => {
                        let (gi, ri) = raw_query_prior(&data.i, k_max, seed)?;
                        let (gj, rj) = raw_query_prior(&data.j, k_max, seed)?;
                        (gi, gj, Some((ri, rj)))
                    }
                };
                Ok(Self {
                    gaussian,
                    gmm: GmmPair::new(gi, gj)?,
                    baseline: Some((data.i, data.j)),
                    fit_reports: reports,
                })
            }
        }
    }

    pub fn calibrate(&self, method: Method, target: &PrivacyTarget) -> Result<CalibrationResult> {
        match method {
            Method::Exact => calibrate_exact(&self.gaussian, target),
            Method::ClosedForm => calibrate_closed_form(&self.gaussian, target),
            Method::Gmm => calibrate_gmm(&self.gmm, target),
            Method::Baseline => {
                let (i, j) = self.baseline.as_ref().ok_or_else(|| {
                    Error::Config("the baseline needs a data-backed query (raw or mean)".into())
                })?;
                winf_baseline_theta(i, j, target)
            }
            Method::All => Err(Error::Config("choose a single method".into())),
        }
    }
}

/// The (alpha, epsilon, method) grid of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    pub method: Method,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("the epsilon grid is empty".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("the alpha grid is empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("epsilon {e} must be positive and finite")));
        }
        if self.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("epsilons must be strictly ascending".into()));
        }
        for &a in &self.alphas {
            check_alpha(a).map_err(|_| Error::Config(format!("alpha {a} must exceed 1")))?;
        }
        Ok(())
    }
}

/// Parses `start:stop:step` into the points `start + i * step <= stop`,
/// rounded to 12 decimals.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("grid {spec:?} is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(Error::Config(format!("grid {spec:?} has too many points")));
    }
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{p:?} is not a number")))
        })
        .collect()
}

/// One calibrated grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub epsilon: f64,
    pub method: Method,
    pub theta: f64,
    pub achieved_divergence: f64,
}

/// Calibrates every cell, ordered by (alpha, method, epsilon). Cells run in
/// parallel; the first failure aborts the sweep.
pub fn run_sweep(problem: &Problem, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let methods = config.method.expand(problem.baseline.is_some());
    let mut alphas = config.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let mut cells = Vec::new();
    for &alpha in &alphas {
        for &method in &methods {
            for &epsilon in &config.epsilons {
                cells.push((alpha, method, epsilon));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(alpha, method, epsilon)| {
            let cell = || -> Result<SweepRow> {
                let target = PrivacyTarget::new(alpha, epsilon)?;
                let r = problem.calibrate(method, &target)?;
                Ok(SweepRow {
                    alpha,
                    epsilon,
                    method,
                    theta: r.theta(),
                    achieved_divergence: r.achieved_divergence,
                })
            };
            cell().map_err(|e| Error::Cell {
                alpha,
                epsilon,
                method: method.to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 190.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of theta against epsilon, one polyline per (alpha, method).
pub fn render_svg(rows: &[SweepRow]) -> String {
    let mut series: BTreeMap<(u64, Method), Vec<(f64, f64)>> = BTreeMap::new();
    let mut alpha_of = BTreeMap::new();
    for r in rows {
        let key = (r.alpha.to_bits(), r.method);
        alpha_of.insert(key, r.alpha);
        series.entry(key).or_default().push((r.epsilon, r.theta));
    }
    let mut order: Vec<(u64, Method)> = series.keys().copied().collect();
    order.sort_by(|a, b| alpha_of[a].total_cmp(&alpha_of[b]).then(a.1.cmp(&b.1)));

    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for r in rows {
        x0 = x0.min(r.epsilon);
        x1 = x1.max(r.epsilon);
        y1 = y1.max(r.theta);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if !(y1 > 0.0) || !y1.is_finite() {
        y1 = 1.0;
    }
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - y / y1 * plot_h;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<path d=\"M{:.2} {:.2} V{:.2} H{:.2}\" fill=\"none\" stroke=\"black\"/>\n",
        MARGIN_L,
        MARGIN_T,
        MARGIN_T + plot_h,
        MARGIN_L + plot_w
    ));
    for t in 0..=5 {
        let f = t as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), f * y1);
        let (px, py) = (sx(xv), sy(yv));
        s.push_str(&format!(
            "<path d=\"M{px:.2} {:.2} v5 M{:.2} {py:.2} h-5\" stroke=\"black\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_L
        ));
        s.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 18.0,
            tick_label(xv)
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            tick_label(yv)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">privacy budget epsilon</text>\n",
        MARGIN_L + plot_w / 2.0,
        SVG_H - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">noise theta</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    for (n, key) in order.iter().enumerate() {
        let colour = PALETTE[n % PALETTE.len()];
        let points: Vec<String> = series[key]
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_T + 10.0 + 18.0 * n as f64;
        let lx = SVG_W - MARGIN_R + 15.0;
        s.push_str(&format!(
            "<path d=\"M{lx:.2} {ly:.2} h24\" stroke=\"{colour}\" stroke-width=\"2\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{} (alpha={})</text>\n",
            lx + 30.0,
            ly + 4.0,
            key.1,
            alpha_of[key]
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    let text = format!("{v:.3}");
    let trimmed = text.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() || trimmed == "-" {
        "0".into()
    } else {
        trimmed.to_string()
    }
}

pub fn write_svg(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    file.write_all(render_svg(rows).as_bytes())
        .map_err(|e| Error::file(path, e))
}

/// One of our calibrations set against the baseline at the same cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub alpha: f64,
    pub epsilon: f64,
    pub method: Method,
    pub theta: f64,
    pub theta_baseline: f64,
    /// `1 - theta / theta_baseline`, absent when either is zero.
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub cells: Vec<CompareCell>,
    pub cells_compared: usize,
    pub mean_reduction: Option<f64>,
    pub mean_reduction_by_method: BTreeMap<Method, f64>,
}

/// Pairs every non-baseline row with the baseline row at the same
/// (alpha, epsilon) and averages the reduction over cells where both
/// thetas are positive.
pub fn compare(rows: &[SweepRow]) -> Result<CompareSummary> {
    let mut baseline = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == Method::Baseline) {
        baseline.insert((r.alpha.to_bits(), r.epsilon.to_bits()), r.theta);
    }
    if baseline.is_empty() {
        return Err(Error::Config("comparison needs baseline rows".into()));
    }
    let mut cells = Vec::new();
    let mut by_method: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method != Method::Baseline) {
        let Some(&tb) = baseline.get(&(r.alpha.to_bits(), r.epsilon.to_bits())) else {
            continue;
        };
        let reduction = (r.theta > 0.0 && tb > 0.0).then(|| 1.0 - r.theta / tb);
        if let Some(red) = reduction {
            let e = by_method.entry(r.method).or_default();
            e.0 += red;
            e.1 += 1;
        }
        cells.push(CompareCell {
            alpha: r.alpha,
            epsilon: r.epsilon,
            method: r.method,
            theta: r.theta,
            theta_baseline: tb,
            reduction,
        });
    }
    let used: Vec<f64> = cells.iter().filter_map(|c| c.reduction).collect();
    Ok(CompareSummary {
        cells_compared: used.len(),
        mean_reduction: (!used.is_empty()).then(|| used.iter().sum::<f64>() / used.len() as f64),
        mean_reduction_by_method: by_method
            .into_iter()
            .map(|(m, (s, n))| (m, s / n as f64))
            .collect(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epsilon: f64, method: Method, theta: f64) -> SweepRow {
        SweepRow {
            alpha: 2.0,
            epsilon,
            method,
            theta,
            achieved_divergence: 0.0,
        }
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1:0.5:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_grid("1:1:0.5").unwrap(), vec![1.0]);
        assert!(parse_grid("1:0:0.5").is_err());
        assert!(parse_grid("1:2").is_err());
        assert_eq!(parse_list("1.5, 2,3").unwrap(), vec![1.5, 2.0, 3.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = SweepConfig {
            epsilons: vec![],
            alphas: vec![2.0],
            method: Method::Exact,
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.epsilons = vec![0.5, 0.5];
        assert!(c.validate().is_err());
        c.epsilons = vec![0.5, 1.0];
        assert!(c.validate().is_ok());
        c.alphas = vec![1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn sweep_rows_are_sorted_and_complete() {
        let p = Problem::from_gaussians(
            GaussianPrior::new(1.0, 1.0).unwrap(),
            GaussianPrior::new(0.0, 2.0).unwrap(),
        )
        .unwrap();
        let cfg = SweepConfig {
            epsilons: vec![0.2, 0.5, 1.0],
            alphas: vec![3.0, 2.0],
            method: Method::All,
        };
        let rows = run_sweep(&p, &cfg).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 3);
        assert!(rows.windows(2).all(|w| {
            (w[0].alpha, w[0].method, w[0].epsilon) < (w[1].alpha, w[1].method, w[1].epsilon)
        }));
        assert!(rows.iter().all(|r| r.method != Method::Baseline));
        let err = run_sweep(&p, &SweepConfig { method: Method::Baseline, ..cfg }).unwrap_err();
        assert!(matches!(err, Error::Cell { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn compare_examples() {
        let same = [row(0.5, Method::Exact, 2.0), row(0.5, Method::Baseline, 2.0)];
        assert_eq!(compare(&same).unwrap().mean_reduction, Some(0.0));
        let half = [
            row(0.5, Method::Exact, 1.0),
            row(0.5, Method::Baseline, 2.0),
            row(1.0, Method::Exact, 0.5),
            row(1.0, Method::Baseline, 1.0),
            row(2.0, Method::Exact, 0.0),
            row(2.0, Method::Baseline, 0.5),
        ];
        let s = compare(&half).unwrap();
        assert_eq!(s.mean_reduction, Some(0.5));
        assert_eq!(s.cells_compared, 2);
        assert_eq!(s.cells.len(), 3);
    }

    #[test]
    fn svg_is_deterministic() {
        let rows = [row(0.5, Method::Exact, 1.0), row(1.0, Method::Exact, 0.7)];
        let a = render_svg(&rows);
        assert_eq!(a, render_svg(&rows));
        assert!(a.contains("<polyline"));
        assert!(a.contains("exact (alpha=2)"));
    }
}
