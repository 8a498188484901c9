//! Sum-of-rank-one structure `R = A diag(p) A^H` with a known dictionary `A`
//! and nonnegative powers `p`, updated in closed form.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EstimationError, Result};
use crate::mm::{mm_drive, EstimatorResult, MmContext, MmSettings, MmStructure, ResultFlag};
use crate::numerics::{chol_pd, Scalar};
use crate::tyler::{weighted_scatter_with, SampleSet};

const SUBSET_CHECKS: usize = 20;
const SUBSET_COND_LIMIT: f64 = 1e10;
/// Epsilon used when a run with `ε = 0` hits a singular iterate.
pub const FALLBACK_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct RankOneDictionary<T: Scalar> {
    atoms: DMatrix<T>,
    augmented: bool,
}

impl<T: Scalar> RankOneDictionary<T> {
    /// Dictionary with `L > K` atoms (the columns of `atoms`), every `K` of
    /// which must be linearly independent. That is checked on random
    /// `K`-column subsets drawn from a fixed seed.
    pub fn new(atoms: DMatrix<T>) -> Result<Self> {
        let (k, l) = atoms.shape();
        if k == 0 {
            return Err(EstimationError::invalid("atoms must have positive dimension"));
        }
        if l <= k {
            return Err(EstimationError::invalid(format!(
                "need more atoms than dimensions (L = {l}, K = {k}); use an augmented dictionary instead"
            )));
        }
        check_finite(&atoms)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..SUBSET_CHECKS {
            let cols: Vec<usize> = sample(&mut rng, l, k).into_vec();
            let sub = atoms.select_columns(cols.iter());
            let sv = sub.singular_values();
            let (max, min) = (sv.max(), sv.min());
            if !(min > 0.0 && max / min < SUBSET_COND_LIMIT) {
                return Err(EstimationError::invalid(format!(
                    "atoms {cols:?} are (nearly) linearly dependent"
                )));
            }
        }
        Ok(Self {
            atoms,
            augmented: false,
        })
    }

    /// `[A, I]`: the identity columns model white noise and make any `A`
    /// admissible, including one with no columns.
    pub fn augmented(atoms: DMatrix<T>) -> Result<Self> {
        let k = atoms.nrows();
        if k == 0 {
            return Err(EstimationError::invalid("atoms must have positive dimension"));
        }
        check_finite(&atoms)?;
        let l = atoms.ncols();
        let mut full = DMatrix::zeros(k, l + k);
        full.columns_mut(0, l).copy_from(&atoms);
        full.columns_mut(l, k).fill_with_identity();
        Ok(Self {
            atoms: full,
            augmented: true,
        })
    }

    /// Skips the independence check; for dictionaries known to satisfy it.
    pub(crate) fn trusted(atoms: DMatrix<T>) -> Self {
        Self {
            atoms,
            augmented: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms, including identity columns of an augmented dictionary.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn atoms(&self) -> &DMatrix<T> {
        &self.atoms
    }

    /// `A diag(p + ε) A^H`.
    pub fn assemble(&self, p: &[f64], epsilon: f64) -> DMatrix<T> {
        let mut scaled = self.atoms.clone();
        for (mut col, &pj) in scaled.column_iter_mut().zip(p) {
            col *= T::from_real(pj + epsilon);
        }
        let r = &scaled * self.atoms.adjoint();
        crate::numerics::hermitian_part(&r)
    }
}

fn check_finite<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if m.iter().any(|v| !(v.real().is_finite() && v.imaginary().is_finite())) {
        return Err(EstimationError::invalid("atoms have non-finite entries"));
    }
    Ok(())
}

/// Quantities defining the surrogate `w^T p + d^T p^{-1}` at `p_t`.
#[derive(Debug, Clone)]
pub struct SurrogateParams<T: Scalar> {
    pub r_t: DMatrix<T>,
    pub m_t: DMatrix<T>,
    pub w: DVector<f64>,
    pub d: DVector<f64>,
}

impl<T: Scalar> SurrogateParams<T> {
    /// `w^T p + Σ_j d_j / p_j`, with `d_j / p_j = 0` when `d_j = 0`.
    pub fn surrogate(&self, p: &[f64]) -> f64 {
        surrogate_value(self.w.as_slice(), self.d.as_slice(), p)
    }
}

pub fn surrogate_value(w: &[f64], d: &[f64], p: &[f64]) -> f64 {
    w.iter()
        .zip(d)
        .zip(p)
        .map(|((w, d), p)| w * p + if *d == 0.0 { 0.0 } else { d / p })
        .sum()
}

/// `R_t = A P_t A^H`, `M_t`, `w_j = a_j^H R_t^{-1} a_j` and
/// `d_j = p_j² a_j^H R_t^{-1} M_t R_t^{-1} a_j`.
pub fn surrogate_params<T: Scalar>(
    dict: &RankOneDictionary<T>,
    p_t: &[f64],
    x: &SampleSet<T>,
) -> Result<SurrogateParams<T>> {
    surrogate_params_eps(dict, p_t, 0.0, x)
}

/// Same as [`surrogate_params`] with `P_t` replaced by `P_t + εI`; `d` then
/// carries the factor `(p_j + ε)²`.
pub fn surrogate_params_eps<T: Scalar>(
    dict: &RankOneDictionary<T>,
    p_t: &[f64],
    epsilon: f64,
    x: &SampleSet<T>,
) -> Result<SurrogateParams<T>> {
    if p_t.len() != dict.len() {
        return Err(EstimationError::invalid(format!(
            "{} powers for {} atoms",
            p_t.len(),
            dict.len()
        )));
    }
    if x.dim() != dict.dim() {
        return Err(EstimationError::invalid("dictionary and samples differ in dimension"));
    }
    let r_t = dict.assemble(p_t, epsilon);
    let factor = chol_pd(&r_t).ok_or_else(|| {
        EstimationError::numerical("A P A^H is singular; the dictionary condition is violated")
    })?;
    let m_t = weighted_scatter_with(&factor, x);
    let y = factor.solve(dict.atoms());
    let my = &m_t * &y;
    let l = dict.len();
    let mut w = DVector::zeros(l);
    let mut d = DVector::zeros(l);
    for j in 0..l {
        let a = dict.atoms().column(j);
        let yj = y.column(j);
        w[j] = a.dotc(&yj).real();
        let q = p_t[j] + epsilon;
        d[j] = (q * q * yj.dotc(&my.column(j)).real()).max(0.0);
    }
    Ok(SurrogateParams { r_t, m_t, w, d })
}

/// Coordinatewise minimizer of `w^T p + d^T p^{-1}`: `p_j = √(d_j / w_j)`.
pub fn power_update(w: &[f64], d: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(d)
        .map(|(w, d)| if *d > 0.0 { (d / w).sqrt() } else { 0.0 })
        .collect()
}

struct RankOneMm<'a, T: Scalar> {
    dict: &'a RankOneDictionary<T>,
    epsilon: f64,
    flags: Vec<ResultFlag>,
}

impl<T: Scalar> MmStructure<T> for RankOneMm<'_, T> {
    type Params = Vec<f64>;

    fn assemble(&self, p: &Vec<f64>) -> Result<DMatrix<T>> {
        if p.iter().all(|&v| v == 0.0) && self.epsilon == 0.0 {
            return Err(EstimationError::FailedToConverge("all powers are zero".into()));
        }
        let r = self.dict.assemble(p, self.epsilon);
        if chol_pd(&r).is_none() {
            return Err(EstimationError::numerical("A P A^H is not positive definite"));
        }
        Ok(r)
    }

    fn rescale(&self, p: &mut Vec<f64>, factor: f64) {
        p.iter_mut().for_each(|v| *v *= factor);
    }

    fn scale_invariant(&self) -> bool {
        self.epsilon == 0.0
    }

    fn minimize_surrogate(&mut self, p: &Vec<f64>, ctx: &MmContext<'_, T>) -> Result<Vec<f64>> {
        let s = surrogate_params_eps(self.dict, p, self.epsilon, ctx.samples)?;
        let q = power_update(s.w.as_slice(), s.d.as_slice());
        Ok(q.into_iter().map(|v| (v - self.epsilon).max(0.0)).collect())
    }

    fn flatten(&self, p: &Vec<f64>) -> Vec<f64> {
        p.clone()
    }

    fn flags(&self) -> Vec<ResultFlag> {
        self.flags.clone()
    }
}

/// MM over the powers of a rank-one dictionary, started from `p = 1`.
/// With `epsilon > 0` the model is `A (P + εI) A^H`.
pub fn estimate_rank_one<T: Scalar>(
    dict: &RankOneDictionary<T>,
    x: &SampleSet<T>,
    settings: &MmSettings,
    epsilon: f64,
) -> Result<EstimatorResult<T>> {
    estimate_rank_one_from(dict, x, settings, epsilon, &vec![1.0; dict.len()])
}

pub fn estimate_rank_one_from<T: Scalar>(
    dict: &RankOneDictionary<T>,
    x: &SampleSet<T>,
    settings: &MmSettings,
    epsilon: f64,
    init: &[f64],
) -> Result<EstimatorResult<T>> {
    x.require_more_samples_than_dim()?;
    if x.dim() != dict.dim() {
        return Err(EstimationError::invalid(format!(
            "dictionary has dimension {} but samples have dimension {}",
            dict.dim(),
            x.dim()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(EstimationError::invalid(format!("epsilon must be a nonnegative number, got {epsilon}")));
    }
    if init.len() != dict.len() || init.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(EstimationError::invalid("initial powers must be nonnegative and match the atom count"));
    }
    if chol_pd(&dict.assemble(init, epsilon)).is_none() {
        return Err(EstimationError::invalid("initial powers give a singular matrix"));
    }

    let mut mm = RankOneMm {
        dict,
        epsilon,
        flags: Vec::new(),
    };
    match mm_drive(&mut mm, init.to_vec(), x, settings) {
        Err(e) if epsilon == 0.0 && matches!(e.root(), EstimationError::NumericalFailure(_)) => {
            let mut mm = RankOneMm {
                dict,
                epsilon: FALLBACK_EPSILON,
                flags: vec![ResultFlag::EpsilonFallback {
                    epsilon: FALLBACK_EPSILON,
                }],
            };
            mm_drive(&mut mm, init.to_vec(), x, settings)
        }
        other => other,
    }
}
