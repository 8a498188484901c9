//! Named estimators shared by the CLI and the experiment runner, over real
//! or complex data.

use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use robust_scatter::kronecker::{estimate_kronecker, KroneckerMethod};
use robust_scatter::linear::{estimate_linear, LinearStructure};
use robust_scatter::mm::{EstimatorResult, MmSettings, ResultFlag, Termination};
use robust_scatter::numerics::{normalize_trace, Field, Scalar};
use robust_scatter::rank_one::{estimate_rank_one, RankOneDictionary};
use robust_scatter::spiked::{estimate_spiked, project_spiked};
use robust_scatter::toeplitz::{build_embedding, estimate_banded_toeplitz_with, estimate_toeplitz_with, BandedSpec};
use robust_scatter::tyler::{tyler_unconstrained, SampleSet};
use serde::{Deserialize, Serialize};

use crate::doa::{parse_ula_spec, ula_dictionary};
use crate::error::{BenchError, Result};
use crate::io::read_dictionary;
use crate::metrics::scm;

#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl Matrix {
    fn from_generic<T: Scalar>(m: &DMatrix<T>) -> Self {
        match T::FIELD {
            Field::Real => Matrix::Real(m.map(|v| v.re())),
            Field::Complex => Matrix::Complex(m.map(|v| v.to_c64())),
        }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        match self {
            Matrix::Real(m) => m.map(|v| Complex64::new(v, 0.0)),
            Matrix::Complex(m) => m.clone(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Matrix::Real(m) => m.shape(),
            Matrix::Complex(m) => m.shape(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Real(SampleSet<f64>),
    Complex(SampleSet<Complex64>),
}

impl Samples {
    pub fn dim(&self) -> usize {
        match self {
            Samples::Real(x) => x.dim(),
            Samples::Complex(x) => x.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::Real(x) => x.len(),
            Samples::Complex(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_complex(&self) -> SampleSet<Complex64> {
        match self {
            Samples::Real(x) => x.to_complex(),
            Samples::Complex(x) => x.clone(),
        }
    }
}

/// Field-erased [`EstimatorResult`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub scatter: Matrix,
    pub params: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub flags: Vec<ResultFlag>,
}

impl Fit {
    fn from_result<T: Scalar>(r: EstimatorResult<T>) -> Self {
        Fit {
            scatter: Matrix::from_generic(&r.scatter),
            params: r.params,
            objective_trace: r.objective_trace,
            iterations: r.iterations,
            termination: r.termination,
            flags: r.flags,
        }
    }

    /// A closed-form estimate with no iterations.
    fn direct(scatter: Matrix) -> Self {
        Fit {
            scatter,
            params: Vec::new(),
            objective_trace: Vec::new(),
            iterations: 0,
            termination: Termination::Converged,
            flags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    #[default]
    Gs,
    Mm,
}

impl From<MethodSpec> for KroneckerMethod {
    fn from(m: MethodSpec) -> Self {
        match m {
            MethodSpec::Gs => KroneckerMethod::GaussSeidel,
            MethodSpec::Mm => KroneckerMethod::BlockMm,
        }
    }
}

fn yes() -> bool {
    true
}

/// Structure imposed on the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    /// Tyler's estimator without constraints.
    Unconstrained,
    /// A linear-span preset (`toeplitz`, `banded:k`, `circulant`, `diagonal`, `full`).
    Linear { preset: String },
    /// Toeplitz through circulant embedding.
    Toeplitz {
        #[serde(default)]
        embedding_size: Option<usize>,
    },
    Banded {
        bandwidth: usize,
        #[serde(default)]
        embedding_size: Option<usize>,
    },
    /// Sum of rank-one terms; `dictionary` is `ula:K:step_degrees` or a CSV path.
    RankOne {
        dictionary: String,
        #[serde(default = "yes")]
        augmented: bool,
        #[serde(default)]
        epsilon: f64,
    },
    Spiked { spikes: usize },
    Kronecker {
        p: usize,
        q: usize,
        #[serde(default)]
        method: MethodSpec,
        #[serde(default)]
        b_structure: Option<String>,
    },
}

impl StructureSpec {
    /// Column label in result tables.
    pub fn label(&self) -> String {
        match self {
            StructureSpec::Unconstrained => "tyler".into(),
            StructureSpec::Linear { preset } => format!("linear:{preset}"),
            StructureSpec::Toeplitz { embedding_size: None } => "toeplitz".into(),
            StructureSpec::Toeplitz { embedding_size: Some(l) } => format!("toeplitz:L{l}"),
            StructureSpec::Banded { bandwidth, embedding_size: None } => format!("banded:{bandwidth}"),
            StructureSpec::Banded { bandwidth, embedding_size: Some(l) } => format!("banded:{bandwidth}:L{l}"),
            StructureSpec::RankOne { augmented, .. } => {
                if *augmented { "rank_one+noise".into() } else { "rank_one".into() }
            }
            StructureSpec::Spiked { spikes } => format!("spiked:{spikes}"),
            StructureSpec::Kronecker { method, b_structure, .. } => {
                let m = match method {
                    MethodSpec::Gs => "gs",
                    MethodSpec::Mm => "mm",
                };
                match b_structure {
                    Some(b) => format!("kronecker:{m}+{b}"),
                    None => format!("kronecker:{m}"),
                }
            }
        }
    }
}

/// Comparison estimators without a structural constraint of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Scm,
    #[serde(alias = "tyler_unconstrained")]
    Tyler,
    /// Tyler's estimate projected onto the spiked structure.
    ProjectedTyler,
}

impl Baseline {
    pub fn label(&self) -> &'static str {
        match self {
            Baseline::Scm => "scm",
            Baseline::Tyler => "tyler",
            Baseline::ProjectedTyler => "projected_tyler",
        }
    }
}

/// A [`StructureSpec`] with its dictionary loaded.
#[derive(Debug, Clone)]
pub struct Estimator {
    spec: StructureSpec,
    atoms: Option<Matrix>,
}

impl Estimator {
    pub fn new(spec: StructureSpec) -> Result<Self> {
        let atoms = match &spec {
            StructureSpec::RankOne { dictionary, epsilon, .. } => {
                if !(*epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(BenchError::invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
                }
                Some(load_atoms(dictionary)?)
            }
            _ => None,
        };
        Ok(Self { spec, atoms })
    }

    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn label(&self) -> String {
        self.spec.label()
    }

    /// Runs the estimator. Real samples are promoted to complex when the
    /// dictionary is complex.
    pub fn fit(&self, x: &Samples, settings: &MmSettings) -> Result<Fit> {
        if let StructureSpec::Kronecker { p, q, method, b_structure } = &self.spec {
            let Samples::Real(x) = x else {
                return Err(BenchError::invalid("the Kronecker structure supports real samples only"));
            };
            let b = b_structure.as_deref().map(|name| LinearStructure::<f64>::from_name(name, *q)).transpose()?;
            let res = estimate_kronecker(*p, *q, x, settings, (*method).into(), b.as_ref())?;
            return Ok(Fit::from_result(res));
        }
        match (x, &self.atoms) {
            (Samples::Real(x), None) => self.fit_generic(x, None, settings),
            (Samples::Real(x), Some(Matrix::Real(a))) => self.fit_generic(x, Some(a), settings),
            (Samples::Complex(x), None) => self.fit_generic(x, None, settings),
            (x, Some(a)) => self.fit_generic(&x.to_complex(), Some(&a.to_complex()), settings),
        }
    }

    fn fit_generic<T: Scalar>(&self, x: &SampleSet<T>, atoms: Option<&DMatrix<T>>, s: &MmSettings) -> Result<Fit> {
        let k = x.dim();
        let res = match &self.spec {
            StructureSpec::Unconstrained => tyler_unconstrained(x, s)?,
            StructureSpec::Linear { preset } => estimate_linear(&LinearStructure::from_name(preset, k)?, x, s)?,
            StructureSpec::Toeplitz { embedding_size } => estimate_toeplitz_with(&build_embedding(k, *embedding_size)?, x, s)?,
            StructureSpec::Banded { bandwidth, embedding_size } => {
                let spec = BandedSpec::new(build_embedding(k, *embedding_size)?, *bandwidth)?;
                estimate_banded_toeplitz_with(&spec, x, s)?
            }
            StructureSpec::RankOne { augmented, epsilon, .. } => {
                let atoms = atoms.expect("rank-one estimator always carries a dictionary").clone();
                let dict = if *augmented {
                    RankOneDictionary::augmented(atoms)?
                } else {
                    RankOneDictionary::new(atoms)?
                };
                estimate_rank_one(&dict, x, s, *epsilon)?
            }
            StructureSpec::Spiked { spikes } => estimate_spiked(*spikes, x, s)?,
            StructureSpec::Kronecker { .. } => unreachable!("handled in fit"),
        };
        Ok(Fit::from_result(res))
    }
}

fn load_atoms(dictionary: &str) -> Result<Matrix> {
    if dictionary.starts_with("ula:") {
        let (k, step) = parse_ula_spec(dictionary)
            .ok_or_else(|| BenchError::invalid(format!("bad ULA spec '{dictionary}', expected ula:K:step_degrees")))?;
        Ok(Matrix::Complex(ula_dictionary(k, step)?.1))
    } else {
        read_dictionary(&PathBuf::from(dictionary))
    }
}

/// Computes the requested baselines on one sample set, in order. Tyler's
/// estimate is shared between `tyler` and `projected_tyler`.
pub fn fit_baselines(
    baselines: &[Baseline],
    x: &Samples,
    settings: &MmSettings,
    spikes: Option<usize>,
) -> Vec<Result<Matrix>> {
    fn generic<T: Scalar>(
        baselines: &[Baseline],
        x: &SampleSet<T>,
        settings: &MmSettings,
        spikes: Option<usize>,
    ) -> Vec<Result<Matrix>> {
        let mut tyler = None;
        let mut tyler_fit = || -> Result<DMatrix<T>> {
            Ok(tyler
                .get_or_insert_with(|| tyler_unconstrained(x, settings).map(|r| r.scatter))
                .clone()?)
        };
        baselines
            .iter()
            .map(|b| {
                let m = match b {
                    Baseline::Scm => normalize_trace(&scm(x))?,
                    Baseline::Tyler => tyler_fit()?,
                    Baseline::ProjectedTyler => {
                        let l = spikes.ok_or_else(|| BenchError::invalid("projected_tyler needs a spiked structure"))?;
                        project_spiked(&tyler_fit()?, l)?
                    }
                };
                Ok(Matrix::from_generic(&m))
            })
            .collect()
    }
    match x {
        Samples::Real(x) => generic(baselines, x, settings, spikes),
        Samples::Complex(x) => generic(baselines, x, settings, spikes),
    }
}

/// Baselines as [`Fit`]s, for the CLI.
pub fn fit_baseline(baseline: Baseline, x: &Samples, settings: &MmSettings, spikes: Option<usize>) -> Result<Fit> {
    if baseline == Baseline::Tyler {
        return Estimator::new(StructureSpec::Unconstrained)?.fit(x, settings);
    }
    fit_baselines(&[baseline], x, settings, spikes)
        .pop()
        .expect("one baseline requested")
        .map(Fit::direct)
}
