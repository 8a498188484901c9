//! Monte Carlo experiment runner.
//!
//! Trials run in parallel, but each one draws its truth and samples from a
//! seed derived from `(rng_seed, N, trial)` and results are gathered in
//! trial order. The results table is therefore byte-identical for a fixed
//! configuration whatever the thread count. Wall-clock times go to a
//! separate timing table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use robust_scatter::mm::MmSettings;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::estimators::{fit_baselines, Baseline, Estimator, Matrix, Samples, StructureSpec};
use crate::generate::{sample_elliptical, trial_seed, Truth, TruthSpec};
use crate::metrics::{mean_stderr, squared_error, subspace_error};

fn default_trials() -> usize {
    100
}

fn default_dof() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SettingsConfig {
    fn default() -> Self {
        let s = MmSettings::default();
        Self {
            tol: s.tol,
            max_iter: s.max_iter,
        }
    }
}

impl SettingsConfig {
    pub fn to_mm(&self) -> MmSettings {
        MmSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            record_trace: false,
        }
    }
}

/// JSON experiment description.
///
/// ```json
/// {
///   "structure": {"kind": "toeplitz"},
///   "k": 15,
///   "n_list": [20, 40, 60, 100],
///   "trials": 100,
///   "rng_seed": 1,
///   "truth": {"kind": "ar_toeplitz", "beta": 0.8},
///   "baselines": ["scm", "tyler"],
///   "output": "toeplitz.csv"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Structured estimator under test; may be omitted to run baselines only.
    #[serde(default)]
    pub structure: Option<StructureSpec>,
    pub k: usize,
    pub n_list: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub rng_seed: u64,
    pub truth: TruthSpec,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Degrees of freedom of the χ² texture.
    #[serde(default = "default_dof")]
    pub tau_dof: f64,
    #[serde(default)]
    pub settings: SettingsConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(BenchError::invalid("trials must be at least 1"));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::invalid("n_list must be non-empty and strictly increasing"));
        }
        if self.k == 0 {
            return Err(BenchError::invalid("k must be positive"));
        }
        if self.structure.is_none() && self.baselines.is_empty() {
            return Err(BenchError::invalid("nothing to run: give a structure or at least one baseline"));
        }
        if self.baselines.contains(&Baseline::ProjectedTyler) && self.spikes().is_none() {
            return Err(BenchError::invalid("projected_tyler needs a spiked structure"));
        }
        if !(self.tau_dof > 0.0) {
            return Err(BenchError::invalid("tau_dof must be positive"));
        }
        self.settings.to_mm().validate()?;
        self.truth.validate(self.k)
    }

    fn spikes(&self) -> Option<usize> {
        match self.structure {
            Some(StructureSpec::Spiked { spikes }) => Some(spikes),
            _ => None,
        }
    }

    /// Estimator labels in output order.
    pub fn labels(&self) -> Vec<String> {
        self.structure
            .iter()
            .map(StructureSpec::label)
            .chain(self.baselines.iter().map(|b| b.label().to_string()))
            .collect()
    }
}

/// Errors of one estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScore {
    pub nmse: f64,
    pub subspace_error: Option<f64>,
    pub seconds: f64,
}

/// Per-estimator outcomes of one trial, in [`ExperimentConfig::labels`]
/// order; `None` marks a failed estimate.
pub type TrialOutcome = Vec<Option<TrialScore>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub estimator: String,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub nmse_mean: Option<f64>,
    pub nmse_stderr: Option<f64>,
    pub subspace_error_mean: Option<f64>,
    pub wall_time_mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.9e}")).unwrap_or_default()
}

impl ExperimentReport {
    pub fn row(&self, estimator: &str, n: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }

    /// Deterministic results table.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("estimator,N,trials,failures,nmse_mean,nmse_stderr,subspace_error_mean\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.estimator,
                r.n,
                r.trials,
                r.failures,
                fmt_opt(r.nmse_mean),
                fmt_opt(r.nmse_stderr),
                fmt_opt(r.subspace_error_mean)
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("estimator,N,wall_time_mean_seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.estimator, r.n, fmt_opt(r.wall_time_mean_seconds));
        }
        out
    }

    /// Writes the results to `path` and the timings next to it as
    /// `<stem>_timing.csv`. Returns the timing path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.results_csv()).map_err(|e| BenchError::io(path, e))?;
        let timing = timing_path(path);
        std::fs::write(&timing, self.timing_csv()).map_err(|e| BenchError::io(&timing, e))?;
        Ok(timing)
    }
}

pub fn timing_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_timing.csv"))
}

fn score(estimate: &Matrix, truth: &Truth, signal_dim: Option<usize>) -> Result<(f64, Option<f64>)> {
    let (nmse, sub) = match (estimate, truth) {
        (Matrix::Real(e), Truth::Real(t)) => (
            squared_error(e, t)?,
            signal_dim.map(|l| subspace_error(e, t, l)).transpose()?,
        ),
        _ => {
            let e = estimate.to_complex();
            let t = match truth {
                Truth::Real(t) => Matrix::Real(t.clone()).to_complex(),
                Truth::Complex(t) => t.clone(),
            };
            (
                squared_error(&e, &t)?,
                signal_dim.map(|l| subspace_error(&e, &t, l)).transpose()?,
            )
        }
    };
    Ok((nmse, sub.map(|s| s.value)))
}

/// Samples of one trial.
pub fn trial_data(cfg: &ExperimentConfig, n: usize, trial: usize) -> Result<(Truth, Samples)> {
    let seed = trial_seed(cfg.rng_seed, n, trial);
    let truth = cfg.truth.generate(cfg.k, seed)?;
    let samples = match &truth {
        Truth::Real(r0) => Samples::Real(sample_elliptical(r0, n, seed, cfg.tau_dof)?),
        Truth::Complex(r0) => Samples::Complex(sample_elliptical(r0, n, seed, cfg.tau_dof)?),
    };
    Ok((truth, samples))
}

fn run_trial(cfg: &ExperimentConfig, estimator: Option<&Estimator>, n: usize, trial: usize) -> Result<TrialOutcome> {
    let (truth, x) = trial_data(cfg, n, trial)?;
    let settings = cfg.settings.to_mm();
    let signal_dim = cfg.truth.signal_dim();
    let mut outcome = Vec::with_capacity(1 + cfg.baselines.len());

    if let Some(est) = estimator {
        let start = Instant::now();
        let fit = est.fit(&x, &settings);
        let seconds = start.elapsed().as_secs_f64();
        outcome.push(match fit {
            Ok(fit) => {
                let (nmse, sub) = score(&fit.scatter, &truth, signal_dim)?;
                Some(TrialScore { nmse, subspace_error: sub, seconds })
            }
            Err(e) if e.exit_code() == 2 => return Err(e),
            Err(_) => None,
        });
    }
    for b in &cfg.baselines {
        let start = Instant::now();
        let fit = fit_baselines(&[*b], &x, &settings, cfg.spikes()).pop().expect("one baseline");
        let seconds = start.elapsed().as_secs_f64();
        outcome.push(match fit {
            Ok(m) => {
                let (nmse, sub) = score(&m, &truth, signal_dim)?;
                Some(TrialScore { nmse, subspace_error: sub, seconds })
            }
            Err(e) if e.exit_code() == 2 => return Err(e),
            Err(_) => None,
        });
    }
    Ok(outcome)
}

/// Runs every trial at sample size `n` and returns the outcomes in trial
/// order.
pub fn run_trials(cfg: &ExperimentConfig, n: usize) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    let estimator = cfg.structure.clone().map(Estimator::new).transpose()?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, estimator.as_ref(), n, t))
        .collect()
}

fn aggregate(label: &str, n: usize, scores: &[Option<TrialScore>]) -> ResultRow {
    let ok: Vec<&TrialScore> = scores.iter().flatten().collect();
    let nmse: Vec<f64> = ok.iter().map(|s| s.nmse).collect();
    let sub: Vec<f64> = ok.iter().filter_map(|s| s.subspace_error).collect();
    let secs: Vec<f64> = ok.iter().map(|s| s.seconds).collect();
    let stats = mean_stderr(&nmse);
    ResultRow {
        estimator: label.to_string(),
        n,
        trials: scores.len(),
        failures: scores.len() - ok.len(),
        nmse_mean: stats.map(|s| s.0),
        nmse_stderr: stats.map(|s| s.1),
        subspace_error_mean: mean_stderr(&sub).map(|s| s.0),
        wall_time_mean_seconds: mean_stderr(&secs).map(|s| s.0),
    }
}

/// One row per `(N, estimator)`, ordered by `N` and then by
/// [`ExperimentConfig::labels`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let labels = cfg.labels();
    let mut rows = Vec::with_capacity(labels.len() * cfg.n_list.len());
    for &n in &cfg.n_list {
        let outcomes = run_trials(cfg, n)?;
        for (j, label) in labels.iter().enumerate() {
            let column: Vec<Option<TrialScore>> = outcomes.iter().map(|o| o[j]).collect();
            rows.push(aggregate(label, n, &column));
        }
    }
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{"k": 4, "n_list": [10], "trials": 1, "rng_seed": 9,
                "truth": {"kind": "ar_toeplitz", "beta": 0.5}, "baselines": ["scm"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn scm_only_single_trial_gives_one_row() {
        let report = run_experiment(&base_config()).unwrap();
        let csv = report.results_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("scm,10,1,0,"));
        let row = &report.rows[0];
        assert_eq!(row.nmse_stderr, Some(0.0));
        assert_eq!(row.subspace_error_mean, None);
    }

    #[test]
    fn nmse_matches_direct_computation() {
        let cfg = base_config();
        let (truth, x) = trial_data(&cfg, 10, 0).unwrap();
        let (Truth::Real(r0), Samples::Real(x)) = (truth, x) else { panic!() };
        let direct = squared_error(&crate::metrics::scm(&x), &r0).unwrap();
        let report = run_experiment(&cfg).unwrap();
        assert!((report.rows[0].nmse_mean.unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_config();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.n_list = vec![20, 20];
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.baselines = vec![Baseline::ProjectedTyler];
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.baselines.clear();
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"k": 4}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"k": 4, "n_list": [10], "rng_seed": 1, "truth": {"kind": "ar_toeplitz", "beta": 0.5}, "extra": 1}"#
        )
        .is_err());
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        // N = K: Tyler-type estimators reject the data on every trial.
        let mut cfg = base_config();
        cfg.n_list = vec![4];
        cfg.trials = 3;
        cfg.structure = Some(StructureSpec::Unconstrained);
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let rows = vec![None, Some(TrialScore { nmse: 0.5, subspace_error: None, seconds: 1.0 }), None];
        let row = aggregate("x", 5, &rows);
        assert_eq!((row.trials, row.failures), (3, 2));
        assert_eq!(row.nmse_mean, Some(0.5));
    }

    #[test]
    fn doa_truth_reports_subspace_error() {
        let cfg = ExperimentConfig::from_json(
            r#"{"k": 6, "n_list": [12], "trials": 2, "rng_seed": 1,
                "truth": {"kind": "doa", "angles_deg": [-20, 30], "powers": [1], "noise_var": 0.1},
                "structure": {"kind": "rank_one", "dictionary": "ula:6:5"},
                "baselines": ["scm", "tyler"]}"#,
        )
        .unwrap();
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            let s = r.subspace_error_mean.unwrap();
            assert!((0.0..=2.0 + 1e-12).contains(&s));
        }
    }

    #[test]
    fn timing_sidecar_path() {
        assert_eq!(timing_path(Path::new("/tmp/out/toeplitz.csv")), PathBuf::from("/tmp/out/toeplitz_timing.csv"));
    }

    #[test]
    fn identical_csv_across_thread_counts() {
        let mut cfg = base_config();
        cfg.trials = 8;
        cfg.n_list = vec![10, 20];
        cfg.structure = Some(StructureSpec::Toeplitz { embedding_size: None });
        cfg.baselines = vec![Baseline::Scm, Baseline::Tyler];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_experiment(&cfg).unwrap().results_csv())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(3));
    }
}
