//! Spiked structure `R = Σ_{j≤L} p_j a_j a_j^H + σ² I` with unknown
//! orthonormal directions. The surrogate `log det R + Tr(M_t R^{-1})` is
//! minimized in closed form from the eigendecomposition of `M_t`.

use nalgebra::DMatrix;

use crate::error::{EstimationError, Result};
use crate::mm::{mm_drive, EstimatorResult, MmContext, MmSettings, MmStructure, ResultFlag};
use crate::numerics::{hermitian_eig, normalize_trace, Scalar};
use crate::tyler::SampleSet;

/// Relative gap below which `λ_L` and `λ_{L+1}` count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModel<T: Scalar> {
    pub directions: DMatrix<T>,
    pub powers: Vec<f64>,
    pub noise_var: f64,
}

impl<T: Scalar> SpikedModel<T> {
    pub fn dim(&self) -> usize {
        self.directions.nrows()
    }

    pub fn spikes(&self) -> usize {
        self.directions.ncols()
    }

    pub fn assemble(&self) -> DMatrix<T> {
        let k = self.dim();
        let mut scaled = self.directions.clone();
        for (mut col, &p) in scaled.column_iter_mut().zip(&self.powers) {
            col *= T::from_real(p);
        }
        let r = &scaled * self.directions.adjoint() + DMatrix::identity(k, k) * T::from_real(self.noise_var);
        crate::numerics::hermitian_part(&r)
    }
}

/// Closed-form surrogate minimizer. The flag is true when `λ_L` and
/// `λ_{L+1}` tie, in which case the split of the eigenspace follows the
/// eigensolver's order.
pub fn spiked_inner_update<T: Scalar>(m_t: &DMatrix<T>, l: usize) -> Result<(SpikedModel<T>, bool)> {
    let k = m_t.nrows();
    if l == 0 || l >= k {
        return Err(EstimationError::invalid(format!("spike count must satisfy 1 <= L < K, got L = {l}, K = {k}")));
    }
    let eig = hermitian_eig(m_t)?;
    let lam = &eig.eigenvalues;
    let noise_var = lam.rows(l, k - l).sum() / (k - l) as f64;
    if !(noise_var > 0.0) {
        return Err(EstimationError::DegenerateData(format!(
            "trailing eigenvalues average to {noise_var:e}; the weighted scatter is singular"
        )));
    }
    let powers = (0..l).map(|j| (lam[j] - noise_var).max(0.0)).collect();
    let scale = lam[0].abs().max(f64::MIN_POSITIVE);
    let tied = (lam[l - 1] - lam[l]).abs() <= TIE_TOL * scale;
    Ok((
        SpikedModel {
            directions: eig.eigenvectors.columns(0, l).into_owned(),
            powers,
            noise_var,
        },
        tied,
    ))
}

/// Trace-normalized closest spiked model to `r` in the sense of the inner
/// update: used to project an unstructured estimate onto the structure.
pub fn project_spiked<T: Scalar>(r: &DMatrix<T>, l: usize) -> Result<DMatrix<T>> {
    let (model, _) = spiked_inner_update(&normalize_trace(r)?, l)?;
    normalize_trace(&model.assemble())
}

struct SpikedMm {
    spikes: usize,
    flags: Vec<ResultFlag>,
}

impl<T: Scalar> MmStructure<T> for SpikedMm {
    type Params = SpikedModel<T>;

    fn assemble(&self, model: &SpikedModel<T>) -> Result<DMatrix<T>> {
        Ok(model.assemble())
    }

    fn rescale(&self, model: &mut SpikedModel<T>, factor: f64) {
        model.powers.iter_mut().for_each(|p| *p *= factor);
        model.noise_var *= factor;
    }

    fn minimize_surrogate(&mut self, _model: &SpikedModel<T>, ctx: &MmContext<'_, T>) -> Result<SpikedModel<T>> {
        let (model, tied) = spiked_inner_update(ctx.weighted_scatter()?, self.spikes)?;
        if tied {
            self.flags.push(ResultFlag::DegenerateSpectrum {
                iteration: ctx.iteration,
            });
        }
        Ok(model)
    }

    /// `[σ², p_1, …, p_L]`.
    fn flatten(&self, model: &SpikedModel<T>) -> Vec<f64> {
        std::iter::once(model.noise_var).chain(model.powers.iter().copied()).collect()
    }

    fn flags(&self) -> Vec<ResultFlag> {
        self.flags.clone()
    }
}

/// Spiked-structure Tyler estimate, started from the identity.
pub fn estimate_spiked<T: Scalar>(l: usize, x: &SampleSet<T>, settings: &MmSettings) -> Result<EstimatorResult<T>> {
    x.require_more_samples_than_dim()?;
    let k = x.dim();
    if l == 0 || l >= k {
        return Err(EstimationError::invalid(format!("spike count must satisfy 1 <= L < K, got L = {l}, K = {k}")));
    }
    let init = SpikedModel {
        directions: DMatrix::identity(k, l),
        powers: vec![0.0; l],
        noise_var: 1.0,
    };
    mm_drive(
        &mut SpikedMm {
            spikes: l,
            flags: Vec::new(),
        },
        init,
        x,
        settings,
    )
}
