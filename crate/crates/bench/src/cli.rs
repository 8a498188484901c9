//! Command-line interface: `estimate`, `bench` and `doa`.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use robust_scatter::mm::{MmSettings, ResultFlag, Termination};

use crate::doa::{angle_grid, angles_recovered, music_spectrum, MUSIC_STEP_DEG};
use crate::error::{BenchError, Result};
use crate::estimators::{fit_baseline, Baseline, Estimator, Fit, Matrix, MethodSpec, Samples, StructureSpec};
use crate::experiment::ExperimentConfig;
use crate::generate::{doa_covariance, sample_elliptical};
use crate::io::{read_samples, write_matrix, write_spectrum};

#[derive(Debug, Parser)]
#[command(name = "robust-scatter", version, about = "Structured Tyler scatter estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate one scatter matrix from a sample file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Bench(BenchArgs),
    /// MUSIC direction finding on a sample file or a synthetic ULA scenario.
    Doa(DoaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureKind {
    Unconstrained,
    Scm,
    Linear,
    Toeplitz,
    Banded,
    RankOne,
    Spiked,
    Kronecker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gs,
    Mm,
}

#[derive(Debug, Clone, Args)]
pub struct StructureArgs {
    #[arg(long, value_enum, default_value = "unconstrained")]
    pub structure: StructureKind,
    /// Linear preset: toeplitz, banded:k, circulant, diagonal or full.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<usize>,
    /// Circulant embedding size L (default 2K - 1).
    #[arg(long)]
    pub embedding_size: Option<usize>,
    /// Dictionary: CSV file with one atom per row, or ula:K:step_degrees.
    #[arg(long)]
    pub dictionary: Option<String>,
    /// Do not append identity atoms to the dictionary.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long)]
    pub spikes: Option<usize>,
    /// Kronecker factor sizes p,q (K = p q).
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "gs")]
    pub method: MethodArg,
    /// Linear preset imposed on the Kronecker factor B.
    #[arg(long)]
    pub b_structure: Option<String>,
}

fn required<T>(v: Option<T>, flag: &str, structure: &str) -> Result<T> {
    v.ok_or_else(|| BenchError::invalid(format!("--structure {structure} needs {flag}")))
}

/// What `estimate` runs: a structured estimator or a baseline.
#[derive(Debug)]
pub enum EstimatorChoice {
    Structured(StructureSpec),
    Baseline(Baseline),
}

impl StructureArgs {
    pub fn choice(&self) -> Result<EstimatorChoice> {
        use EstimatorChoice::Structured;
        Ok(match self.structure {
            StructureKind::Unconstrained => Structured(StructureSpec::Unconstrained),
            StructureKind::Scm => EstimatorChoice::Baseline(Baseline::Scm),
            StructureKind::Linear => Structured(StructureSpec::Linear {
                preset: required(self.preset.clone(), "--preset", "linear")?,
            }),
            StructureKind::Toeplitz => Structured(StructureSpec::Toeplitz {
                embedding_size: self.embedding_size,
            }),
            StructureKind::Banded => Structured(StructureSpec::Banded {
                bandwidth: required(self.bandwidth, "--bandwidth", "banded")?,
                embedding_size: self.embedding_size,
            }),
            StructureKind::RankOne => Structured(StructureSpec::RankOne {
                dictionary: required(self.dictionary.clone(), "--dictionary", "rank-one")?,
                augmented: !self.no_augment,
                epsilon: self.epsilon,
            }),
            StructureKind::Spiked => Structured(StructureSpec::Spiked {
                spikes: required(self.spikes, "--spikes", "spiked")?,
            }),
            StructureKind::Kronecker => {
                let dims = required(self.dims.clone(), "--dims p,q", "kronecker")?;
                let [p, q] = dims[..] else {
                    return Err(BenchError::invalid("--dims takes exactly two sizes p,q"));
                };
                Structured(StructureSpec::Kronecker {
                    p,
                    q,
                    method: match self.method {
                        MethodArg::Gs => MethodSpec::Gs,
                        MethodArg::Mm => MethodSpec::Mm,
                    },
                    b_structure: self.b_structure.clone(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn settings(&self) -> Result<MmSettings> {
        let s = MmSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            record_trace: true,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Sample CSV, one sample per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV for the estimate (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub structure: StructureArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Results CSV; overrides the config. Timings go to <stem>_timing.csv.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DoaEstimator {
    RankOne,
    Tyler,
    Scm,
}

#[derive(Debug, Args)]
pub struct DoaArgs {
    /// Complex sample CSV; a synthetic scenario is drawn when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of sources L (defaults to the number of synthetic angles).
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long, value_enum, default_value = "rank-one")]
    pub estimator: DoaEstimator,
    /// Dictionary grid spacing in degrees.
    #[arg(long, default_value_t = 5.0)]
    pub grid_step: f64,
    /// MUSIC evaluation grid spacing in degrees.
    #[arg(long, default_value_t = MUSIC_STEP_DEG)]
    pub music_step: f64,
    /// Pseudospectrum CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-10,10,15,35,40")]
    pub angles: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub powers: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub noise_var: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Degrees of freedom of the χ² texture.
    #[arg(long, default_value_t = 1.0)]
    pub dof: f64,
    /// Largest peak-to-angle distance that counts as recovered (synthetic runs).
    #[arg(long, default_value_t = 2.5)]
    pub tolerance: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn describe(fit: &Fit) -> String {
    let mut s = format!("iterations={} termination=", fit.iterations);
    s += match fit.termination {
        Termination::Converged => "converged",
        Termination::MaxIter => "max_iter",
    };
    if let Some(obj) = fit.objective_trace.last() {
        s += &format!(" objective={obj:.12e}");
    }
    for flag in &fit.flags {
        match flag {
            ResultFlag::DegenerateSpectrum { iteration } => s += &format!(" flag=degenerate_spectrum@{iteration}"),
            ResultFlag::EpsilonFallback { epsilon } => s += &format!(" flag=epsilon_fallback({epsilon:e})"),
        }
    }
    s
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| BenchError::io(p, e))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_scatter(out: Box<dyn Write>, m: &Matrix) -> Result<()> {
    match m {
        Matrix::Real(m) => write_matrix(out, m),
        Matrix::Complex(m) => write_matrix(out, m),
    }
}

fn fit_choice(choice: EstimatorChoice, x: &Samples, settings: &MmSettings) -> Result<Fit> {
    match choice {
        EstimatorChoice::Structured(spec) => Estimator::new(spec)?.fit(x, settings),
        EstimatorChoice::Baseline(b) => fit_baseline(b, x, settings, None),
    }
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let x = read_samples(&args.input)?;
    let fit = fit_choice(args.structure.choice()?, &x, &args.solver.settings()?)?;
    eprintln!("{}", describe(&fit));
    write_scatter(open_output(&args.output)?, &fit.scatter)
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    if let Some(n) = &args.n_list {
        cfg.n_list = n.clone();
    }
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    let run = || crate::experiment::run_experiment(&cfg);
    let report = match args.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| BenchError::invalid(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    match &cfg.output {
        Some(path) => {
            let timing = report.write(path)?;
            eprintln!("wrote {} and {}", path.display(), timing.display());
        }
        None => print!("{}", report.results_csv()),
    }
    Ok(())
}

pub fn doa(args: &DoaArgs) -> Result<()> {
    let settings = args.solver.settings()?;
    let (x, truth) = match &args.input {
        Some(path) => (read_samples(path)?, None),
        None => {
            let powers = match args.powers.len() {
                1 => vec![args.powers[0]; args.angles.len()],
                _ => args.powers.clone(),
            };
            if powers.len() != args.angles.len() {
                return Err(BenchError::invalid("--powers needs one value or one per angle"));
            }
            let r0 = doa_covariance(args.k, &args.angles, &powers, args.noise_var);
            let x = sample_elliptical(&r0, args.n, args.seed, args.dof)?;
            (Samples::Complex(x), Some(args.angles.clone()))
        }
    };
    let sources = match (args.sources, &truth) {
        (Some(l), _) => l,
        (None, Some(angles)) => angles.len(),
        (None, None) => return Err(BenchError::invalid("--sources is required with --input")),
    };
    let choice = match args.estimator {
        DoaEstimator::RankOne => EstimatorChoice::Structured(StructureSpec::RankOne {
            dictionary: format!("ula:{}:{}", x.dim(), args.grid_step),
            augmented: true,
            epsilon: 0.0,
        }),
        DoaEstimator::Tyler => EstimatorChoice::Structured(StructureSpec::Unconstrained),
        DoaEstimator::Scm => EstimatorChoice::Baseline(Baseline::Scm),
    };
    let fit = fit_choice(choice, &x, &settings)?;
    eprintln!("{}", describe(&fit));
    let r_hat: DMatrix<_> = fit.scatter.to_complex();
    let music = music_spectrum(&r_hat, sources, &angle_grid(args.music_step)?)?;
    if let Some(path) = &args.output {
        let file = std::fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
        write_spectrum(std::io::BufWriter::new(file), &music)?;
    }
    let peaks: Vec<String> = music.peaks.iter().map(|p| p.to_string()).collect();
    println!("peaks_deg,{}", peaks.join(","));
    if music.short_peak_list {
        println!("short_peak_list,true");
    }
    if let Some(angles) = truth {
        println!("recovered,{}", angles_recovered(&music.peaks, &angles, args.tolerance));
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Bench(a) => bench(a),
        Command::Doa(a) => doa(a),
    }
}
