//! Samples, Tyler's cost function, the weighted scatter operator and the
//! unconstrained fixed-point estimator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{EstimationError, Result};
use crate::mm::{mm_drive, MmContext, MmSettings, MmStructure, EstimatorResult};
use crate::numerics::{chol_pd, hermitian_part, normalize_trace, relative_change, require_pd, Field, PdFactor, Scalar};

/// `N` samples of dimension `K`, stored column-wise (`K × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T: Scalar> {
    data: DMatrix<T>,
}

impl<T: Scalar> SampleSet<T> {
    /// Builds a sample set from a `K × N` matrix whose columns are samples.
    pub fn from_columns(data: DMatrix<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(EstimationError::invalid("sample set must be non-empty"));
        }
        for (i, col) in data.column_iter().enumerate() {
            if col.iter().any(|v| !(v.real().is_finite() && v.imaginary().is_finite())) {
                return Err(EstimationError::invalid(format!("sample {i} has non-finite entries")));
            }
            if col.norm_squared() == 0.0 {
                return Err(EstimationError::invalid(format!("sample {i} is the zero vector")));
            }
        }
        Ok(Self { data })
    }

    /// Builds a sample set from an `N × K` matrix whose rows are samples.
    pub fn from_rows(rows: &DMatrix<T>) -> Result<Self> {
        Self::from_columns(rows.transpose())
    }

    pub fn from_samples(samples: &[DVector<T>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(EstimationError::invalid("sample set must be non-empty"));
        }
        let k = samples[0].len();
        if samples.iter().any(|s| s.len() != k) {
            return Err(EstimationError::invalid("samples have inconsistent dimensions"));
        }
        Self::from_columns(DMatrix::from_columns(samples))
    }

    pub fn field(&self) -> Field {
        T::FIELD
    }

    /// Sample dimension `K`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Sample count `N`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// `K × N` matrix of samples.
    pub fn columns(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn sample(&self, i: usize) -> DVector<T> {
        self.data.column(i).into_owned()
    }

    /// Enforces `N > K`, required by every estimator except the Kronecker one.
    pub fn require_more_samples_than_dim(&self) -> Result<()> {
        if self.len() <= self.dim() {
            return Err(EstimationError::invalid(format!(
                "need N > K samples, got N = {} for K = {}",
                self.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn to_complex(&self) -> SampleSet<Complex64> {
        SampleSet {
            data: self.data.map(|v| v.to_c64()),
        }
    }

    /// Scales sample `i` by `factors[i]`.
    pub fn rescaled(&self, factors: &[f64]) -> Result<Self> {
        let mut data = self.data.clone();
        for (mut col, &c) in data.column_iter_mut().zip(factors) {
            col *= T::from_real(c);
        }
        Self::from_columns(data)
    }
}

fn check_dims<T: Scalar>(r: &DMatrix<T>, x: &SampleSet<T>) -> Result<()> {
    if r.nrows() != x.dim() || r.ncols() != x.dim() {
        return Err(EstimationError::invalid(format!(
            "scatter is {}x{} but samples have dimension {}",
            r.nrows(),
            r.ncols(),
            x.dim()
        )));
    }
    Ok(())
}

/// Tyler's cost `log det R + (K/N) Σ log(x_i^H R^{-1} x_i)`.
pub fn tyler_cost<T: Scalar>(r: &DMatrix<T>, x: &SampleSet<T>) -> Result<f64> {
    check_dims(r, x)?;
    let factor = require_pd(r, "tyler_cost")?;
    Ok(tyler_cost_with(&factor, x))
}

pub(crate) fn tyler_cost_with<T: Scalar>(factor: &PdFactor<T>, x: &SampleSet<T>) -> f64 {
    let k = x.dim() as f64;
    let n = x.len() as f64;
    let sum_log: f64 = factor.quadratic_forms(x.columns()).iter().map(|q| q.ln()).sum();
    factor.ln_det() + k / n * sum_log
}

/// `M = (K/N) Σ x_i x_i^H / (x_i^H R^{-1} x_i)`.
pub fn weighted_scatter<T: Scalar>(r: &DMatrix<T>, x: &SampleSet<T>) -> Result<DMatrix<T>> {
    check_dims(r, x)?;
    let factor = require_pd(r, "weighted_scatter")?;
    Ok(weighted_scatter_with(&factor, x))
}

pub(crate) fn weighted_scatter_with<T: Scalar>(factor: &PdFactor<T>, x: &SampleSet<T>) -> DMatrix<T> {
    let k = x.dim() as f64;
    let n = x.len() as f64;
    let q = factor.quadratic_forms(x.columns());
    let mut z = x.columns().clone();
    for (mut col, qi) in z.column_iter_mut().zip(q) {
        col *= T::from_real(1.0 / qi.sqrt());
    }
    hermitian_part(&(&z * z.adjoint())) * T::from_real(k / n)
}

/// `‖R̂ − Φ(R̂)‖_F / ‖R̂‖_F` where `Φ` is the weighted scatter followed by
/// trace normalization and `R̂` is itself trace-normalized first.
pub fn fixed_point_residual<T: Scalar>(r: &DMatrix<T>, x: &SampleSet<T>) -> Result<f64> {
    let r = normalize_trace(r)?;
    let phi = normalize_trace(&weighted_scatter(&r, x)?)?;
    Ok(relative_change(&phi, &r))
}

/// Unconstrained MM structure: the surrogate minimizer over all PD matrices
/// is the weighted scatter itself.
#[derive(Debug, Clone, Default)]
pub struct Unconstrained;

impl<T: Scalar> MmStructure<T> for Unconstrained {
    type Params = DMatrix<T>;

    fn assemble(&self, params: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(params.clone())
    }

    fn rescale(&self, params: &mut DMatrix<T>, factor: f64) {
        *params *= T::from_real(factor);
    }

    fn minimize_surrogate(&mut self, _params: &DMatrix<T>, ctx: &MmContext<'_, T>) -> Result<DMatrix<T>> {
        let m = ctx.weighted_scatter()?;
        if chol_pd(m).is_none() {
            return Err(EstimationError::FailedToConverge(
                "weighted scatter is singular; samples are not in general position".into(),
            ));
        }
        Ok(m.clone())
    }

    fn flatten(&self, params: &DMatrix<T>) -> Vec<f64> {
        flatten_hermitian(params)
    }
}

/// Packs the upper triangle of a Hermitian matrix as real numbers
/// (diagonal, then real and imaginary parts of off-diagonal entries).
pub fn flatten_hermitian<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(m[(i, i)].real());
    }
    for i in 0..n {
        for j in i + 1..n {
            out.push(m[(i, j)].real());
            if T::FIELD == Field::Complex {
                out.push(m[(i, j)].imaginary());
            }
        }
    }
    out
}

/// Tyler's fixed-point estimator started from `I/K`.
pub fn tyler_unconstrained<T: Scalar>(x: &SampleSet<T>, settings: &MmSettings) -> Result<EstimatorResult<T>> {
    let k = x.dim();
    tyler_unconstrained_from(x, settings, &DMatrix::identity(k, k))
}

/// Tyler's fixed-point estimator started from any PD matrix.
pub fn tyler_unconstrained_from<T: Scalar>(
    x: &SampleSet<T>,
    settings: &MmSettings,
    init: &DMatrix<T>,
) -> Result<EstimatorResult<T>> {
    x.require_more_samples_than_dim()?;
    check_dims(init, x)?;
    require_pd(init, "initial scatter")?;
    mm_drive(&mut Unconstrained, init.clone(), x, settings)
}
