//! Monte Carlo studies of the estimators: PLE histograms, PLE against the
//! linearized MLE at the origin, and interval coverage.
//!
//! Every row depends only on `(seed, replication)`: replication `r` draws
//! from [`replication_rng`]`(seed, r)` (offset per `n`), rows are computed in
//! parallel and written in replication order.
//!
//! Configs are flat `key = value` text, one entry per line, `#` comments:
//!
//! ```text
//! experiment   = ple_histogram | mle_vs_ple_origin | ci_coverage
//! stat         = xy                # builtin names, comma separated
//! center       = false             # center the statistic before use
//! theta0       = 2
//! n            = 500,2000
//! replications = 400
//! sampler      = har | gibbs | uniform
//! sweeps       = 50
//! seed         = 42
//! alpha        = 0.05
//! grid         = 128               # Sinkhorn resolution for the overlay
//! paper_gamma  = false             # mle_vs_ple_origin only
//! output       = results.csv       # optional
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PermexpError, Result};
use crate::limiting::{asymptotic_ple_cov, sinkhorn_density, SinkhornOptions};
use crate::mle_zero::{GammaChoice, OriginCalibration};
use crate::model::{center_components, StatisticSpec, ThetaVector};
use crate::pseudolikelihood::{solve_ple, SolveOptions};
use crate::sampler::{replication_rng, sample, uniform_permutation, SamplerConfig, SamplerMethod};
use crate::variance::{confidence_interval, ConfidenceInterval};

/// Failure share above which a run is abandoned.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PleHistogram,
    MleVsPleOrigin,
    CiCoverage,
}

impl std::str::FromStr for ExperimentKind {
    type Err = PermexpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ple_histogram" => Ok(Self::PleHistogram),
            "mle_vs_ple_origin" => Ok(Self::MleVsPleOrigin),
            "ci_coverage" => Ok(Self::CiCoverage),
            other => Err(PermexpError::InvalidConfig(format!("unknown experiment `{other}`"))),
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PleHistogram => "ple_histogram",
            Self::MleVsPleOrigin => "mle_vs_ple_origin",
            Self::CiCoverage => "ci_coverage",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub stat: String,
    pub center: bool,
    pub theta0: f64,
    pub n_values: Vec<usize>,
    pub replications: usize,
    pub sampler: SamplerMethod,
    pub sweeps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub grid: usize,
    pub paper_gamma: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn desk(experiment: ExperimentKind) -> Self {
        let (theta0, n_values, replications) = match experiment {
            ExperimentKind::PleHistogram => (2.0, vec![500, 2000], 400),
            ExperimentKind::MleVsPleOrigin => (0.0, vec![1000, 2000], 400),
            ExperimentKind::CiCoverage => (2.0, vec![1000], 100),
        };
        Self {
            experiment,
            stat: "xy".into(),
            center: false,
            theta0,
            n_values,
            replications,
            sampler: SamplerMethod::HitAndRun,
            sweeps: 50,
            seed: 42,
            alpha: 0.05,
            grid: 128,
            paper_gamma: false,
            output: None,
        }
    }

    /// The published run sizes.
    pub fn paper_scale(experiment: ExperimentKind) -> Self {
        let mut c = Self::desk(experiment);
        match experiment {
            ExperimentKind::PleHistogram => {
                c.n_values = vec![500, 2000, 8000];
                c.replications = 2000;
            }
            ExperimentKind::MleVsPleOrigin => {
                c.n_values = vec![1000, 2000, 4000, 8000];
                c.replications = 2000;
            }
            ExperimentKind::CiCoverage => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PermexpError::InvalidConfig(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n_values.is_empty() {
            return bad("at least one n is required".into());
        }
        if let Some(n) = self.n_values.iter().find(|&&n| n < 2) {
            return bad(format!("every n must be at least 2, got {n}"));
        }
        if !self.theta0.is_finite() {
            return bad("theta0 must be finite".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.sweeps == 0 {
            return bad("sweeps must be at least 1".into());
        }
        if self.spec()?.dimension() != 1 {
            return bad("experiments use a one-dimensional statistic".into());
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<StatisticSpec> {
        let spec = StatisticSpec::from_names(&self.stat)?;
        Ok(if self.center { center_components(&spec) } else { spec })
    }

    fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            method: self.sampler,
            sweeps: self.sweeps,
            proposals_per_sweep: None,
            seed,
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let ns: Vec<String> = self.n_values.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "experiment = {}", self.experiment);
        let _ = writeln!(s, "stat = {}", self.stat);
        let _ = writeln!(s, "center = {}", self.center);
        let _ = writeln!(s, "theta0 = {}", self.theta0);
        let _ = writeln!(s, "n = {}", ns.join(","));
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "sampler = {}", self.sampler);
        let _ = writeln!(s, "sweeps = {}", self.sweeps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "grid = {}", self.grid);
        let _ = writeln!(s, "paper_gamma = {}", self.paper_gamma);
        if let Some(p) = &self.output {
            let _ = writeln!(s, "output = {}", p.display());
        }
        s
    }

    /// Parses a config. `experiment` must appear; other keys default to
    /// [`ExperimentConfig::desk`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PermexpError::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind = entries
            .iter()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| PermexpError::Parse("missing `experiment` key".into()))?
            .1
            .parse()?;
        let mut config = Self::desk(kind);
        for (k, v) in &entries {
            config.set(k, v)?;
        }
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| PermexpError::Parse(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "experiment" => self.experiment = value.parse()?,
            "stat" => self.stat = value.to_string(),
            "center" => self.center = num(key, value)?,
            "theta0" => self.theta0 = num(key, value)?,
            "n" => {
                self.n_values = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "replications" => self.replications = num(key, value)?,
            "sampler" => self.sampler = value.parse()?,
            "sweeps" => self.sweeps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "grid" => self.grid = num(key, value)?,
            "paper_gamma" => self.paper_gamma = num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(PermexpError::Parse(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

/// Seed for the block of replications at the `index`-th `n`, so that
/// streams never repeat across sizes.
fn block_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(PermexpError::SolverFailed(format!(
            "{failed} of {total} replications failed (limit {}%)",
            MAX_FAILURE_FRACTION * 100.0
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PleRow {
    pub n: usize,
    pub replication: usize,
    /// NaN when the replication failed.
    pub theta_hat: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub n: usize,
    pub replication: usize,
    pub estimator: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageRow {
    pub n: usize,
    pub replication: usize,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

pub fn ple_histogram_rows(config: &ExperimentConfig) -> Result<Vec<PleRow>> {
    config.validate()?;
    let spec = config.spec()?;
    let theta = ThetaVector::scalar(config.theta0);
    let mut rows = Vec::new();
    for (idx, &n) in config.n_values.iter().enumerate() {
        let sampler = config.sampler_config(block_seed(config.seed, idx));
        let block: Vec<PleRow> = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(sampler.seed, r as u64);
                let fit = sample(&spec, &theta, n, &sampler, &mut rng)
                    .and_then(|pi| solve_ple(&spec, &pi, &SolveOptions::default()));
                let (theta_hat, converged) = match fit {
                    Ok(rep) if rep.converged => (rep.root[0], true),
                    _ => (f64::NAN, false),
                };
                PleRow {
                    n,
                    replication: r,
                    theta_hat,
                    converged,
                }
            })
            .collect();
        rows.extend(block);
    }
    check_failures(rows.iter().filter(|r| !r.converged).count(), rows.len())?;
    Ok(rows)
}

pub fn mle_vs_ple_rows(config: &ExperimentConfig) -> Result<Vec<EstimatorRow>> {
    config.validate()?;
    let spec = config.spec()?;
    let choice = if config.paper_gamma {
        GammaChoice::Uncentered
    } else {
        GammaChoice::Hoeffding
    };
    let mut rows = Vec::new();
    let mut failed = 0;
    for (idx, &n) in config.n_values.iter().enumerate() {
        let seed = block_seed(config.seed, idx);
        let calibration = OriginCalibration::new(&spec, n, choice)?;
        let block: Vec<(f64, f64)> = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let pi = uniform_permutation(n, &mut replication_rng(seed, r as u64));
                let mle = calibration.estimate(&spec, &pi).map(|t| t[0]).unwrap_or(f64::NAN);
                let ple = match solve_ple(&spec, &pi, &SolveOptions::default()) {
                    Ok(rep) if rep.converged => rep.root[0],
                    _ => f64::NAN,
                };
                (mle, ple)
            })
            .collect();
        for (r, (mle, ple)) in block.into_iter().enumerate() {
            failed += usize::from(mle.is_nan() || ple.is_nan());
            for (estimator, value) in [("mle", mle), ("ple", ple)] {
                rows.push(EstimatorRow {
                    n,
                    replication: r,
                    estimator,
                    value,
                });
            }
        }
    }
    check_failures(failed, rows.len() / 2)?;
    Ok(rows)
}

/// Coverage rows plus the full intervals (`None` for failed replications).
pub fn ci_coverage_rows(config: &ExperimentConfig) -> Result<(Vec<CoverageRow>, Vec<Option<ConfidenceInterval>>)> {
    config.validate()?;
    let spec = config.spec()?;
    let theta = ThetaVector::scalar(config.theta0);
    let mut rows = Vec::new();
    let mut intervals = Vec::new();
    for (idx, &n) in config.n_values.iter().enumerate() {
        let sampler = config.sampler_config(block_seed(config.seed, idx));
        let block: Vec<Option<ConfidenceInterval>> = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(sampler.seed, r as u64);
                sample(&spec, &theta, n, &sampler, &mut rng)
                    .and_then(|pi| confidence_interval(&spec, &pi, &[1.0], config.alpha, &SolveOptions::default()))
                    .ok()
            })
            .collect();
        for (r, ci) in block.into_iter().enumerate() {
            let (lo, hi) = ci.as_ref().map_or((f64::NAN, f64::NAN), |c| (c.lo, c.hi));
            rows.push(CoverageRow {
                n,
                replication: r,
                lo,
                hi,
                covered: lo <= config.theta0 && config.theta0 <= hi,
            });
            intervals.push(ci);
        }
    }
    check_failures(intervals.iter().filter(|c| c.is_none()).count(), rows.len())?;
    Ok((rows, intervals))
}

/// CSV text plus a JSON sidecar of summaries and theoretical overlays.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub csv: String,
    pub sidecar: serde_json::Value,
}

impl ExperimentOutput {
    /// Writes the CSV to `path` and the sidecar to `path` + `.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.csv)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let text = serde_json::to_string_pretty(&self.sidecar).map_err(|e| PermexpError::Parse(e.to_string()))?;
        std::fs::write(PathBuf::from(side), text + "\n")?;
        Ok(())
    }
}

fn finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.filter(|v| v.is_finite()).collect()
}

pub fn run_ple_histogram(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let rows = ple_histogram_rows(config)?;
    let mut csv = String::from("n,replication,theta_hat,converged\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.n, r.replication, r.theta_hat, r.converged);
    }
    let spec = config.spec()?;
    let grid = sinkhorn_density(
        &spec,
        &ThetaVector::scalar(config.theta0),
        &SinkhornOptions::with_resolution(config.grid),
    )?;
    let cov = asymptotic_ple_cov(&grid, &spec)?[(0, 0)];
    let per_n: Vec<_> = config
        .n_values
        .iter()
        .map(|&n| {
            let (mean, sd) = mean_sd(&finite(rows.iter().filter(|r| r.n == n).map(|r| r.theta_hat)));
            json!({
                "n": n,
                "mean": mean,
                "sd": sd,
                "asymptotic_sd": (cov / n as f64).sqrt(),
            })
        })
        .collect();
    Ok(ExperimentOutput {
        csv,
        sidecar: json!({
            "experiment": config.experiment,
            "theta0": config.theta0,
            "grid": config.grid,
            "sqrt_n_asymptotic_sd": cov.sqrt(),
            "per_n": per_n,
            "failures": rows.iter().filter(|r| !r.converged).count(),
        }),
    })
}

pub fn run_mle_vs_ple_origin(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let rows = mle_vs_ple_rows(config)?;
    let mut csv = String::from("n,replication,estimator,value\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.n, r.replication, r.estimator, r.value);
    }
    let per_n: Vec<_> = config
        .n_values
        .iter()
        .map(|&n| {
            let pick = |e: &str| finite(rows.iter().filter(|r| r.n == n && r.estimator == e).map(|r| r.value));
            let (mle, ple) = (pick("mle"), pick("ple"));
            let (_, sd_mle) = mean_sd(&mle);
            let (_, sd_ple) = mean_sd(&ple);
            json!({
                "n": n,
                "sd_mle": sd_mle,
                "sd_ple": sd_ple,
                "sd_ratio_mle_over_ple": sd_mle / sd_ple,
                "sqrt_n_sd_ple": sd_ple * (n as f64).sqrt(),
                "ks_two_sample": ks_two_sample(&mle, &ple),
            })
        })
        .collect();
    Ok(ExperimentOutput {
        csv,
        sidecar: json!({
            "experiment": config.experiment,
            "gamma": if config.paper_gamma { "uncentered" } else { "hoeffding" },
            "per_n": per_n,
        }),
    })
}

pub fn run_ci_coverage(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (rows, _) = ci_coverage_rows(config)?;
    let mut csv = String::from("n,replication,lo,hi,covered\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.n, r.replication, r.lo, r.hi, r.covered);
    }
    let per_n: Vec<_> = config
        .n_values
        .iter()
        .map(|&n| {
            let block: Vec<&CoverageRow> = rows.iter().filter(|r| r.n == n).collect();
            let widths = finite(block.iter().map(|r| r.hi - r.lo));
            json!({
                "n": n,
                "covered": block.iter().filter(|r| r.covered).count(),
                "replications": block.len(),
                "median_width": median(&widths),
            })
        })
        .collect();
    Ok(ExperimentOutput {
        csv,
        sidecar: json!({
            "experiment": config.experiment,
            "theta0": config.theta0,
            "alpha": config.alpha,
            "per_n": per_n,
        }),
    })
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    match config.experiment {
        ExperimentKind::PleHistogram => run_ple_histogram(config),
        ExperimentKind::MleVsPleOrigin => run_mle_vs_ple_origin(config),
        ExperimentKind::CiCoverage => run_ci_coverage(config),
    }
}

/// Sample mean and standard deviation (divisor `len - 1`).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Kolmogorov-Smirnov distance between the sample and `N(mean, sd²)`.
pub fn ks_normal(values: &[f64], mean: f64, sd: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("sd must be positive");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / n).max((i + 1) as f64 / n - c)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
