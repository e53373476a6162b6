use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rpp::data::{load_scenario, raw_query_prior, QueryKind, ScenarioFile};
use rpp::divergence::PrivacyTarget;
use rpp::error::{Error, Result};
use rpp::gaussian::CalibrationMethod;
use rpp::gmm::{FitReport, GmmPrior};
use rpp::sweep::{
    compare, parse_grid, parse_list, run_sweep, write_csv, write_svg, Method, Problem, SweepConfig,
};

/// Gaussian noise calibration for Rényi Pufferfish privacy.
#[derive(Parser)]
#[command(name = "rpp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit mixture priors for both secrets and cache them as JSON.
    Fit(FitArgs),
    /// Calibrate the noise for one (alpha, epsilon) pair.
    Calibrate(CalibrateArgs),
    /// Calibrate over a grid and write sweep.csv and sweep.svg.
    Sweep(SweepArgs),
    /// Compare our calibrations against the Wasserstein baseline.
    Compare(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Upper limit on mixture components.
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct QueryArgs {
    /// raw, mean or external (defaults to the scenario file, then raw).
    #[arg(long, value_parser = parse_query)]
    query: Option<QueryKind>,
    /// Directory holding prior_i.json and prior_j.json from `fit`.
    #[arg(long)]
    priors: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value = "exact", value_parser = parse_method)]
    method: Method,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    query: QueryArgs,
    /// Comma-separated Rényi orders.
    #[arg(long, default_value = "3")]
    alpha: String,
    /// Comma-separated privacy budgets.
    #[arg(long, conflicts_with = "eps_grid")]
    eps: Option<String>,
    /// Budget grid as start:stop:step.
    #[arg(long)]
    eps_grid: Option<String>,
    #[arg(long, default_value = "all", value_parser = parse_method)]
    method: Method,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_query(s: &str) -> std::result::Result<QueryKind, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "raw" => Ok(QueryKind::Raw),
        "mean" => Ok(QueryKind::Mean),
        "external" | "external_gaussian" => Ok(QueryKind::External),
        other => Err(format!("unknown query {other:?} (expected raw, mean or external)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::file(&path, e))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    secret_i: &'a str,
    secret_j: &'a str,
    dropped_rows: usize,
    report_i: FitReport,
    report_j: FitReport,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let c = &a.common;
    let file = ScenarioFile::load(&c.scenario)?;
    let scenario = file.require_scenario()?;
    let data = load_scenario(scenario)?;
    let (gi, ri) = raw_query_prior(&data.i, c.k_max, c.seed)?;
    let (gj, rj) = raw_query_prior(&data.j, c.k_max, c.seed)?;
    println!(
        "secret {:?}: k = {} ({} samples); secret {:?}: k = {} ({} samples)",
        scenario.secret_i, ri.chosen_k, ri.n_samples, scenario.secret_j, rj.chosen_k, rj.n_samples
    );
    write_json(&c.out, "prior_i.json", &gi)?;
    write_json(&c.out, "prior_j.json", &gj)?;
    write_json(
        &c.out,
        "fit_report.json",
        &FitSummary {
            secret_i: &scenario.secret_i,
            secret_j: &scenario.secret_j,
            dropped_rows: data.dropped,
            report_i: ri,
            report_j: rj,
        },
    )
}

fn read_prior(path: &Path) -> Result<GmmPrior> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    GmmPrior::from_json(&text)
}

fn build_problem(c: &Common, q: &QueryArgs) -> Result<Problem> {
    let file = ScenarioFile::load(&c.scenario)?;
    let query = file.query(q.query)?;
    let cached = match &q.priors {
        Some(dir) => Some((read_prior(&dir.join("prior_i.json"))?, read_prior(&dir.join("prior_j.json"))?)),
        None => None,
    };
    Problem::build(&file, query, c.k_max, c.seed, cached)
}

#[derive(Serialize)]
struct CalibrationRecord {
    theta: f64,
    theta_sq: f64,
    method: Method,
    outcome: CalibrationMethod,
    achieved_divergence: f64,
    epsilon: f64,
    alpha: f64,
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    if a.method == Method::All {
        return Err(Error::Config("calibrate takes a single method".into()));
    }
    let target = PrivacyTarget::new(a.alpha, a.eps)
        .map_err(|e| Error::Config(e.to_string()))?;
    let problem = build_problem(&a.common, &a.query)?;
    let r = problem.calibrate(a.method, &target)?;
    let record = CalibrationRecord {
        theta: r.theta(),
        theta_sq: r.theta_sq,
        method: a.method,
        outcome: r.method,
        achieved_divergence: r.achieved_divergence,
        epsilon: a.eps,
        alpha: a.alpha,
    };
    println!("{}", serde_json::to_string(&record)?);
    write_json(&a.common.out, "result.json", &record)
}

fn sweep_config(a: &SweepArgs, method: Method) -> Result<SweepConfig> {
    let epsilons = match (&a.eps, &a.eps_grid) {
        (Some(list), None) => parse_list(list)?,
        (None, Some(grid)) => parse_grid(grid)?,
        _ => return Err(Error::Config("give either --eps or --eps-grid".into())),
    };
    let config = SweepConfig {
        epsilons,
        alphas: parse_list(&a.alpha)?,
        method,
    };
    config.validate()?;
    Ok(config)
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let config = sweep_config(a, a.method)?;
    let problem = build_problem(&a.common, &a.query)?;
    let rows = run_sweep(&problem, &config)?;
    let out = &a.common.out;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    write_csv(&rows, &out.join("sweep.csv"))?;
    write_svg(&rows, &out.join("sweep.svg"))?;
    println!("wrote {} rows to {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn cmd_compare(a: &SweepArgs) -> Result<()> {
    if a.method == Method::Baseline {
        return Err(Error::Config("compare needs at least one of our methods".into()));
    }
    let config = sweep_config(a, Method::All)?;
    let problem = build_problem(&a.common, &a.query)?;
    if problem.baseline.is_none() {
        return Err(Error::Config("the baseline needs a data-backed query (raw or mean)".into()));
    }
    let rows = run_sweep(&problem, &config)?;
    let keep: Vec<_> = rows
        .into_iter()
        .filter(|r| a.method == Method::All || r.method == a.method || r.method == Method::Baseline)
        .collect();
    let summary = compare(&keep)?;
    match summary.mean_reduction {
        Some(m) => println!("mean noise reduction {m:.4} over {} cells", summary.cells_compared),
        None => println!("no cell where both calibrations need noise"),
    }
    write_json(&a.common.out, "compare.json", &summary)
}
