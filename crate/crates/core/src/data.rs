//! Dataset ingestion, secret-conditioned splitting, query priors and the
//! quantile-based Wasserstein baseline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::divergence::{GaussianPrior, PrivacyTarget};
use crate::error::{Error, Result};
use crate::gaussian::{CalibrationMethod, CalibrationResult};
use crate::gmm::{fit_with_bic, var_floor, FitReport, GmmPrior};

/// Cell contents treated as a missing value.
pub const MISSING_TOKENS: [&str; 6] = ["", "?", "NA", "N/A", "nan", "NaN"];

/// Where the data lives and which secret pair is protected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dataset_path: PathBuf,
    pub released_column: String,
    pub sensitive_column: String,
    pub secret_i: String,
    pub secret_j: String,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.secret_i.trim() == self.secret_j.trim() {
            return Err(Error::Config(format!(
                "secret_i and secret_j must differ, both are {:?}",
                self.secret_i
            )));
        }
        Ok(())
    }
}

/// Which released statistic is being protected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuerySpec {
    /// The individual's released value itself.
    Raw,
    /// The sample mean of the released column.
    Mean,
    /// A model's predictive Gaussian under each secret, supplied directly.
    ExternalGaussian { i: GaussianPrior, j: GaussianPrior },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Raw,
    Mean,
    External,
}

/// TOML secrets may be written as strings or numbers.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SecretValue {
    Text(String),
    Int(i64),
    Float(f64),
}

impl SecretValue {
    fn into_string(self) -> String {
        match self {
            SecretValue::Text(s) => s.trim().to_string(),
            SecretValue::Int(i) => i.to_string(),
            SecretValue::Float(f) => f.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryTable {
    kind: Option<QueryKind>,
    prior_i: Option<GaussianPrior>,
    prior_j: Option<GaussianPrior>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioToml {
    dataset_path: Option<PathBuf>,
    released_column: Option<String>,
    sensitive_column: Option<String>,
    secret_i: Option<SecretValue>,
    secret_j: Option<SecretValue>,
    #[serde(default)]
    query: QueryTable,
}

/// A parsed scenario file. The dataset keys may be omitted when only
/// externally supplied priors are used.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Option<Scenario>,
    pub query_kind: Option<QueryKind>,
    pub external: Option<(GaussianPrior, GaussianPrior)>,
}

impl ScenarioFile {
    /// Reads a TOML scenario; `dataset_path` is resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: ScenarioToml =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario file: {e}")))?;
        let data_keys = [
            raw.dataset_path.is_some(),
            raw.released_column.is_some(),
            raw.sensitive_column.is_some(),
            raw.secret_i.is_some(),
            raw.secret_j.is_some(),
        ];
        let scenario = if data_keys.iter().all(|k| *k) {
            let s = Scenario {
                dataset_path: base.join(raw.dataset_path.expect("checked")),
                released_column: raw.released_column.expect("checked"),
                sensitive_column: raw.sensitive_column.expect("checked"),
                secret_i: raw.secret_i.expect("checked").into_string(),
                secret_j: raw.secret_j.expect("checked").into_string(),
            };
            s.validate()?;
            Some(s)
        } else if data_keys.iter().any(|k| *k) {
            return Err(Error::Config(
                "scenario needs all of dataset_path, released_column, sensitive_column, \
                 secret_i and secret_j"
                    .into(),
            ));
        } else {
            None
        };
        let external = match (raw.query.prior_i, raw.query.prior_j) {
            (Some(i), Some(j)) => Some((i, j)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "external query needs both query.prior_i and query.prior_j".into(),
                ))
            }
        };
        Ok(Self {
            scenario,
            query_kind: raw.query.kind,
            external,
        })
    }

    pub fn require_scenario(&self) -> Result<&Scenario> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::Config("scenario file has no dataset section".into()))
    }

    /// Resolves the query, letting `kind` (from the command line) override
    /// the file. Defaults to `Raw`.
    pub fn query(&self, kind: Option<QueryKind>) -> Result<QuerySpec> {
        match kind.or(self.query_kind).unwrap_or(QueryKind::Raw) {
            QueryKind::Raw => Ok(QuerySpec::Raw),
            QueryKind::Mean => Ok(QuerySpec::Mean),
            QueryKind::External => {
                let (i, j) = self.external.ok_or_else(|| {
                    Error::Config("external query needs query.prior_i and query.prior_j".into())
                })?;
                Ok(QuerySpec::ExternalGaussian { i, j })
            }
        }
    }
}

/// Released values split by secret.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretSamples {
    pub i: Vec<f64>,
    pub j: Vec<f64>,
    /// Rows skipped because the released or sensitive cell was missing.
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell)
}

/// Reads the scenario's CSV and returns the released values of the rows
/// whose sensitive attribute equals each secret, in file order.
pub fn load_scenario(scenario: &Scenario) -> Result<SecretSamples> {
    scenario.validate()?;
    let path = &scenario.dataset_path;
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name.trim()).ok_or_else(|| {
            Error::Schema(format!("column {name:?} not found in {}", path.display()))
        })
    };
    let released = column(&scenario.released_column)?;
    let sensitive = column(&scenario.sensitive_column)?;
    let secret_i = scenario.secret_i.trim();
    let secret_j = scenario.secret_j.trim();

    let mut out = SecretSamples {
        i: Vec::new(),
        j: Vec::new(),
        dropped: 0,
    };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let s = record.get(sensitive).unwrap_or("");
        let r = record.get(released).unwrap_or("");
        if is_missing(s) || is_missing(r) {
            out.dropped += 1;
            continue;
        }
        let value: f64 = r.parse().map_err(|_| {
            Error::Schema(format!(
                "row {}: {:?} value {r:?} is not numeric",
                row + 2,
                scenario.released_column
            ))
        })?;
        if !value.is_finite() {
            out.dropped += 1;
            continue;
        }
        if s == secret_i {
            out.i.push(value);
        } else if s == secret_j {
            out.j.push(value);
        }
    }
    if out.dropped > 0 {
        log::info!("dropped {} rows with missing values", out.dropped);
    }
    if out.i.is_empty() {
        return Err(Error::EmptySecret(secret_i.to_string()));
    }
    if out.j.is_empty() {
        return Err(Error::EmptySecret(secret_j.to_string()));
    }
    Ok(out)
}

/// Gaussian approximation of the sample mean: `N(mean, s^2 / n)` with the
/// unbiased sample variance `s^2`.
pub fn mean_query_prior(samples: &[f64]) -> Result<GaussianPrior> {
    let (mean, var) = mean_and_standard_error(samples)?;
    if var == 0.0 {
        return Err(Error::DegenerateData(
            "all samples are equal, so the mean has zero variance".into(),
        ));
    }
    GaussianPrior::new(mean, var)
}

/// [`mean_query_prior`] with a zero variance raised to the mixture-fitting
/// variance floor.
pub fn mean_query_prior_clamped(samples: &[f64]) -> Result<GaussianPrior> {
    let (mean, var) = mean_and_standard_error(samples)?;
    GaussianPrior::new(mean, var.max(var_floor(samples)))
}

fn mean_and_standard_error(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let s2 = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    Ok((mean, s2 / nf))
}

/// Mixture prior of the raw released value, order chosen by BIC.
pub fn raw_query_prior(samples: &[f64], k_max: usize, seed: u64) -> Result<(GmmPrior, FitReport)> {
    fit_with_bic(samples, k_max, seed)
}

/// Largest gap between aligned empirical quantiles of the two samples.
///
/// Both samples are compared at the `n = max(n_i, n_j)` levels `t / n`,
/// `t = 1..=n`, each read off by nearest rank.
pub fn winf_distance(samples_i: &[f64], samples_j: &[f64]) -> Result<f64> {
    if samples_i.is_empty() || samples_j.is_empty() {
        return Err(Error::EmptyData("both sample lists must be non-empty".into()));
    }
    let sorted = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sorted(samples_i), sorted(samples_j));
    let n = a.len().max(b.len());
    // Nearest rank of level t/n in a sample of size m: ceil(t m / n) - 1.
    let rank = |t: usize, m: usize| (t * m).div_ceil(n) - 1;
    Ok((1..=n)
        .map(|t| (a[rank(t, a.len())] - b[rank(t, b.len())]).abs())
        .fold(0.0, f64::max))
}

/// Baseline calibration treating the empirical `W_inf` distance as the
/// sensitivity of a Gaussian mechanism: `theta^2 = alpha W^2 / (2 eps)`.
/// `achieved_divergence` is the mechanism's nominal Rényi bound.
pub fn winf_baseline_theta(
    samples_i: &[f64],
    samples_j: &[f64],
    target: &PrivacyTarget,
) -> Result<CalibrationResult> {
    let w = winf_distance(samples_i, samples_j)?;
    let theta_sq = target.alpha() * w * w / (2.0 * target.epsilon());
    let achieved = if theta_sq > 0.0 {
        target.alpha() * w * w / (2.0 * theta_sq)
    } else {
        0.0
    };
    Ok(CalibrationResult {
        theta_sq,
        method: CalibrationMethod::WassersteinBaseline,
        achieved_divergence: achieved,
        bracket_width_final: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(body: &str) -> (tempfile::TempDir, Scenario) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        let scenario = Scenario {
            dataset_path: path,
            released_column: "value".into(),
            sensitive_column: "group".into(),
            secret_i: "a".into(),
            secret_j: "b".into(),
        };
        (dir, scenario)
    }

    #[test]
    fn splits_rows_by_secret() {
        let (_d, s) = fixture("group,value\na,1.5\nb,2\na,3\n");
        let got = load_scenario(&s).unwrap();
        assert_eq!(got.i, vec![1.5, 3.0]);
        assert_eq!(got.j, vec![2.0]);
        assert_eq!(got.dropped, 0);
    }

    #[test]
    fn missing_values_are_dropped_and_counted() {
        let (_d, s) = fixture("group,value\na,1\n b , ?\nb,4\na,\"5\"\n");
        let got = load_scenario(&s).unwrap();
        assert_eq!(got.i, vec![1.0, 5.0]);
        assert_eq!(got.j, vec![4.0]);
        assert_eq!(got.dropped, 1);
    }

    #[test]
    fn absent_secret_and_column_errors() {
        let (_d, mut s) = fixture("group,value\na,1\na,2\n");
        assert!(matches!(load_scenario(&s), Err(Error::EmptySecret(v)) if v == "b"));
        s.released_column = "income".into();
        let err = load_scenario(&s).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("income")));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn non_numeric_value_is_a_schema_error() {
        let (_d, s) = fixture("group,value\na,1\nb,x\n");
        assert!(matches!(load_scenario(&s), Err(Error::Schema(_))));
    }

    #[test]
    fn mean_prior_examples() {
        let p = mean_query_prior(&[0.0, 2.0]).unwrap();
        assert_eq!((p.mu(), p.var()), (1.0, 1.0));
        assert!(matches!(mean_query_prior(&[4.0; 3]), Err(Error::DegenerateData(_))));
        assert_eq!(mean_query_prior_clamped(&[4.0; 3]).unwrap().var(), 1e-6);
        assert!(matches!(
            mean_query_prior(&[1.0]),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn winf_examples() {
        let xs = [0.5, -1.0, 2.0, 3.5];
        let shifted: Vec<f64> = xs.iter().map(|x| x + 3.0).collect();
        assert_eq!(winf_distance(&xs, &xs).unwrap(), 0.0);
        assert!((winf_distance(&shifted, &xs).unwrap() - 3.0).abs() < 1e-12);
        let target = PrivacyTarget::new(2.0, 0.5).unwrap();
        let r = winf_baseline_theta(&shifted, &xs, &target).unwrap();
        assert!((r.theta_sq - 9.0 * 2.0 / 1.0).abs() < 1e-10);
        assert_eq!(winf_baseline_theta(&xs, &xs, &target).unwrap().theta_sq, 0.0);
        // Unequal sizes are aligned on the finer grid.
        assert_eq!(winf_distance(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn scenario_file_resolves_paths_and_secrets() {
        let text = r#"
            dataset_path = "adult.csv"
            released_column = "education-num"
            sensitive_column = "race"
            secret_i = "White"
            secret_j = 2
        "#;
        let f = ScenarioFile::parse(text, Path::new("/data")).unwrap();
        let s = f.scenario.unwrap();
        assert_eq!(s.dataset_path, PathBuf::from("/data/adult.csv"));
        assert_eq!(s.secret_j, "2");
        assert!(ScenarioFile::parse("secret_i = 'a'", Path::new("")).is_err());
        let same = text.replace("= 2", "= \"White\"");
        assert!(matches!(ScenarioFile::parse(&same, Path::new("")), Err(Error::Config(_))));
    }

    #[test]
    fn external_query_from_file() {
        let text = "[query]\nkind = \"external\"\nprior_i = { mu = 1.0, var = 1.0 }\nprior_j = { mu = 0.0, var = 1.0 }\n";
        let f = ScenarioFile::parse(text, Path::new("")).unwrap();
        assert!(f.scenario.is_none());
        assert!(matches!(f.query(None).unwrap(), QuerySpec::ExternalGaussian { .. }));
        assert_eq!(f.query(Some(QueryKind::Mean)).unwrap(), QuerySpec::Mean);
        let bad = "[query]\nprior_i = { mu = 1.0, var = 0.0 }\nprior_j = { mu = 0.0, var = 1.0 }\n";
        assert!(ScenarioFile::parse(bad, Path::new("")).is_err());
    }
}
