//! Kronecker structure `R = A ⊗ B` for real data.
//!
//! Samples are reshaped as `x_i = vec(M_i)` (column-major) with `M_i` of
//! size `q × p`, so that `x_i^T (A ⊗ B)^{-1} x_i = Tr(A^{-1} M_i^T B^{-1} M_i)`.
//! Two solvers are provided: alternating exact factor updates (each an
//! inner Tyler-type fixed point) and block MM, whose factor update is the
//! matrix geometric mean `A_t # M`.

use nalgebra::DMatrix;

use crate::error::{EstimationError, Result};
use crate::linear::{inner_update, LinearStructure};
use crate::mm::{mm_drive, EstimatorResult, MmContext, MmSettings, MmStructure};
use crate::numerics::{chol_pd, kron, normalize_trace, pd_inv_sqrt, pd_sqrt, relative_change, require_pd, trace_product_re, trace_re};
use crate::tyler::SampleSet;

/// Default relative-change tolerance of the inner fixed-point loops.
pub const INNER_TOL: f64 = 1e-10;
/// Iteration cap of the inner fixed-point loops.
pub const INNER_MAX_ITERS: usize = 5000;

/// Unit-trace factors `A` (`p × p`) and `B` (`q × q`).
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerFactors {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl KroneckerFactors {
    /// Normalizes both factors to unit trace.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        require_pd(&a, "factor A")?;
        require_pd(&b, "factor B")?;
        Ok(Self {
            a: normalize_trace(&a)?,
            b: normalize_trace(&b)?,
        })
    }

    pub fn identity(p: usize, q: usize) -> Self {
        Self {
            a: DMatrix::identity(p, p) / p as f64,
            b: DMatrix::identity(q, q) / q as f64,
        }
    }

    /// Inverse of the layout used in `EstimatorResult::params`.
    pub fn from_flat(p: usize, q: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != p * p + q * q {
            return Err(EstimationError::invalid("flattened factors have the wrong length"));
        }
        Self::new(
            DMatrix::from_column_slice(p, p, &flat[..p * p]),
            DMatrix::from_column_slice(q, q, &flat[p * p..]),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.nrows()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        kron(&self.a, &self.b)
    }
}

/// Samples reshaped to `q × p` matrices.
#[derive(Debug, Clone)]
pub struct ReshapedSamples {
    p: usize,
    q: usize,
    mats: Vec<DMatrix<f64>>,
}

impl ReshapedSamples {
    pub fn new(x: &SampleSet<f64>, p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 || p * q != x.dim() {
            return Err(EstimationError::invalid(format!(
                "factor sizes {p} x {q} do not match sample dimension {}",
                x.dim()
            )));
        }
        let mats: Vec<DMatrix<f64>> = x
            .columns()
            .column_iter()
            .map(|c| DMatrix::from_column_slice(q, p, c.as_slice()))
            .collect();
        let s = Self { p, q, mats };

        // one-sample check of the reshape convention against the full product
        let i = s.mats.len() / 2;
        let a = DMatrix::from_fn(p, p, |r, c| if r == c { 2.0 + r as f64 } else { 0.3 });
        let b = DMatrix::from_fn(q, q, |r, c| if r == c { 1.0 + 0.5 * r as f64 } else { -0.2 });
        let xi = x.sample(i);
        let full = (xi.transpose() * kron(&a, &b).try_inverse().unwrap() * &xi)[(0, 0)];
        let a_inv = a.try_inverse().unwrap();
        let b_inv = b.try_inverse().unwrap();
        let m = &s.mats[i];
        let reshaped = (a_inv * m.transpose() * b_inv * m).trace();
        if (full - reshaped).abs() > 1e-10 * full.abs().max(1.0) {
            return Err(EstimationError::numerical("reshape convention check failed"));
        }
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    fn check(&self, f: &KroneckerFactors) -> Result<()> {
        if f.p() != self.p || f.q() != self.q {
            return Err(EstimationError::invalid("factor sizes do not match the reshaped samples"));
        }
        Ok(())
    }
}

/// `(pq/N) Σ log Tr(A^{-1} M_i^T B^{-1} M_i) + q log det A + p log det B`,
/// which equals Tyler's cost of `A ⊗ B`.
pub fn kron_objective(f: &KroneckerFactors, s: &ReshapedSamples) -> Result<f64> {
    s.check(f)?;
    let fa = require_pd(&f.a, "factor A")?;
    let fb = require_pd(&f.b, "factor B")?;
    let a_inv = fa.inverse();
    let b_inv = fb.inverse();
    let (p, q, n) = (s.p as f64, s.q as f64, s.len() as f64);
    let sum_log: f64 = s
        .mats
        .iter()
        .map(|m| trace_product_re(&a_inv, &(m.transpose() * &b_inv * m)).ln())
        .sum();
    Ok(p * q / n * sum_log + q * fa.ln_det() + p * fb.ln_det())
}

/// `S_i = M_i^T B^{-1} M_i` (`p × p`).
fn a_terms(b: &DMatrix<f64>, s: &ReshapedSamples) -> Result<Vec<DMatrix<f64>>> {
    let b_inv = require_pd(b, "factor B")?.inverse();
    Ok(s.mats.iter().map(|m| m.transpose() * &b_inv * m).collect())
}

/// `T_i = M_i A^{-1} M_i^T` (`q × q`).
fn b_terms(a: &DMatrix<f64>, s: &ReshapedSamples) -> Result<Vec<DMatrix<f64>>> {
    let a_inv = require_pd(a, "factor A")?.inverse();
    Ok(s.mats.iter().map(|m| m * &a_inv * m.transpose()).collect())
}

/// `(d/N) Σ S_i / Tr(C^{-1} S_i)` with `d` the size of `C`.
fn factor_scatter(c: &DMatrix<f64>, terms: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let c_inv = require_pd(c, "factor")?.inverse();
    let d = c.nrows() as f64;
    let mut out = DMatrix::zeros(c.nrows(), c.nrows());
    for t in terms {
        let w = trace_product_re(&c_inv, t);
        if !(w > 0.0) {
            return Err(EstimationError::DegenerateData("a sample has zero weight".into()));
        }
        out += t / w;
    }
    out *= d / terms.len() as f64;
    Ok(crate::numerics::hermitian_part(&out))
}

/// Weighted matrix of the `A`-update at `(A_t, B_t)`.
pub fn weighted_a(f: &KroneckerFactors, s: &ReshapedSamples) -> Result<DMatrix<f64>> {
    s.check(f)?;
    factor_scatter(&f.a, &a_terms(&f.b, s)?)
}

/// Weighted matrix of the `B`-update at `(A, B_t)`.
pub fn weighted_b(f: &KroneckerFactors, s: &ReshapedSamples) -> Result<DMatrix<f64>> {
    s.check(f)?;
    factor_scatter(&f.b, &b_terms(&f.a, s)?)
}

/// Relative residual of the inner fixed point `C = normalize((d/N) Σ S_i / Tr(C^{-1} S_i))`.
fn inner_residual(c: &DMatrix<f64>, terms: &[DMatrix<f64>]) -> Result<f64> {
    let next = normalize_trace(&factor_scatter(c, terms)?)?;
    Ok(relative_change(&next, &normalize_trace(c)?))
}

/// Residual of the `A` fixed point holding `B`.
pub fn a_fixed_point_residual(f: &KroneckerFactors, s: &ReshapedSamples) -> Result<f64> {
    inner_residual(&f.a, &a_terms(&f.b, s)?)
}

/// Residual of the `B` fixed point holding `A`.
pub fn b_fixed_point_residual(f: &KroneckerFactors, s: &ReshapedSamples) -> Result<f64> {
    inner_residual(&f.b, &b_terms(&f.a, s)?)
}

fn fixed_point(start: &DMatrix<f64>, terms: &[DMatrix<f64>], tol: f64, what: &str) -> Result<DMatrix<f64>> {
    let mut c = start.clone();
    for _ in 0..INNER_MAX_ITERS {
        let next = normalize_trace(&factor_scatter(&c, terms)?)?;
        let change = relative_change(&next, &c);
        c = next;
        if change <= tol {
            return Ok(c);
        }
    }
    Err(EstimationError::numerical(format!(
        "{what} fixed point did not reach relative change {tol:e} in {INNER_MAX_ITERS} iterations"
    )))
}

/// Structured factor: coefficients over a linear structure, kept at unit trace.
struct Structured<'a> {
    structure: &'a LinearStructure<f64>,
    coeffs: Vec<f64>,
}

impl Structured<'_> {
    /// One surrogate step at `B_t = R(coeffs)`, returning the new unit-trace `B`.
    fn step(&mut self, b_t: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let next = inner_update(self.structure, &self.coeffs, b_t, m)?;
        let b = self.structure.assemble(&next);
        let tr = trace_re(&b);
        self.coeffs = next.into_iter().map(|c| c / tr).collect();
        Ok(self.structure.assemble(&self.coeffs))
    }
}

fn gauss_seidel_inner(
    f: &KroneckerFactors,
    s: &ReshapedSamples,
    inner_tol: f64,
    b_structure: Option<&mut Structured<'_>>,
) -> Result<KroneckerFactors> {
    s.check(f)?;
    let a = fixed_point(&f.a, &a_terms(&f.b, s)?, inner_tol, "A")?;
    let terms = b_terms(&a, s)?;
    let b = match b_structure {
        None => fixed_point(&f.b, &terms, inner_tol, "B")?,
        Some(st) => {
            let mut b = f.b.clone();
            let mut converged = false;
            for _ in 0..INNER_MAX_ITERS {
                let m = factor_scatter(&b, &terms)?;
                let next = st.step(&b, &m)?;
                let change = relative_change(&next, &b);
                b = next;
                if change <= inner_tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(EstimationError::numerical(format!(
                    "structured B subproblem did not reach relative change {inner_tol:e} in {INNER_MAX_ITERS} iterations"
                )));
            }
            b
        }
    };
    Ok(KroneckerFactors { a, b })
}

/// Exact minimization over `A` with `B` fixed, then over `B` with the new
/// `A` fixed, each by its inner fixed-point iteration run to `inner_tol`.
pub fn gauss_seidel_step(f: &KroneckerFactors, s: &ReshapedSamples, inner_tol: f64) -> Result<KroneckerFactors> {
    gauss_seidel_inner(f, s, inner_tol, None)
}

/// Matrix geometric mean `A # M = A^{1/2} (A^{-1/2} M A^{-1/2})^{1/2} A^{1/2}`,
/// the unique PD solution `X` of `X A^{-1} X = M`.
pub fn geometric_mean(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a_half = pd_sqrt(a)?;
    let a_inv_half = pd_inv_sqrt(a)?;
    let inner = crate::numerics::hermitian_part(&(&a_inv_half * m * &a_inv_half));
    let root = pd_sqrt(&inner)?;
    Ok(crate::numerics::hermitian_part(&(&a_half * root * &a_half)))
}

fn lemma_checked(m: DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    if chol_pd(&m).is_none() {
        return Err(EstimationError::numerical(format!(
            "weighted matrix of the {which}-update is singular; samples are degenerate"
        )));
    }
    Ok(m)
}

fn block_mm_inner(
    f: &KroneckerFactors,
    s: &ReshapedSamples,
    b_structure: Option<&mut Structured<'_>>,
) -> Result<KroneckerFactors> {
    s.check(f)?;
    let m_a = lemma_checked(weighted_a(f, s)?, "A")?;
    let a = normalize_trace(&geometric_mean(&f.a, &m_a)?)?;
    let half = KroneckerFactors { a, b: f.b.clone() };
    let m_b = lemma_checked(weighted_b(&half, s)?, "B")?;
    let b = match b_structure {
        None => normalize_trace(&geometric_mean(&f.b, &m_b)?)?,
        Some(st) => st.step(&f.b, &m_b)?,
    };
    Ok(KroneckerFactors { a: half.a, b })
}

/// One block-MM sweep: `A ← A_t # M_A`, then `B ← B_t # M_B` using the new
/// `A`, both normalized to unit trace.
pub fn block_mm_step(f: &KroneckerFactors, s: &ReshapedSamples) -> Result<KroneckerFactors> {
    block_mm_inner(f, s, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KroneckerMethod {
    GaussSeidel,
    BlockMm,
}

#[derive(Clone)]
struct KronParams {
    factors: KroneckerFactors,
    b_coeffs: Option<Vec<f64>>,
}

struct KronMm<'a> {
    samples: ReshapedSamples,
    method: KroneckerMethod,
    b_structure: Option<&'a LinearStructure<f64>>,
    inner_tol: f64,
}

impl MmStructure<f64> for KronMm<'_> {
    type Params = KronParams;

    fn assemble(&self, params: &KronParams) -> Result<DMatrix<f64>> {
        Ok(params.factors.assemble())
    }

    fn rescale(&self, params: &mut KronParams, factor: f64) {
        params.factors.a *= factor;
    }

    fn minimize_surrogate(&mut self, params: &KronParams, _ctx: &MmContext<'_, f64>) -> Result<KronParams> {
        let mut structured = match (self.b_structure, &params.b_coeffs) {
            (Some(structure), Some(coeffs)) => Some(Structured {
                structure,
                coeffs: coeffs.clone(),
            }),
            _ => None,
        };
        let factors = match self.method {
            KroneckerMethod::GaussSeidel => {
                gauss_seidel_inner(&params.factors, &self.samples, self.inner_tol, structured.as_mut())?
            }
            KroneckerMethod::BlockMm => block_mm_inner(&params.factors, &self.samples, structured.as_mut())?,
        };
        Ok(KronParams {
            factors,
            b_coeffs: structured.map(|s| s.coeffs),
        })
    }

    fn objective(&self, params: &KronParams, _scatter: &DMatrix<f64>, _samples: &SampleSet<f64>) -> Result<f64> {
        kron_objective(&params.factors, &self.samples)
    }

    /// `A` then `B`, each column-major.
    fn flatten(&self, params: &KronParams) -> Vec<f64> {
        params.factors.a.iter().chain(params.factors.b.iter()).copied().collect()
    }
}

/// Kronecker-structured Tyler estimate, started from `I/p ⊗ I/q`.
/// `b_structure` constrains `B` to a linear span (for example Toeplitz).
/// Fewer samples than `pq` are allowed; if the cost is unbounded below the
/// run stops with `DegenerateData`.
pub fn estimate_kronecker(
    p: usize,
    q: usize,
    x: &SampleSet<f64>,
    settings: &MmSettings,
    method: KroneckerMethod,
    b_structure: Option<&LinearStructure<f64>>,
) -> Result<EstimatorResult<f64>> {
    let samples = ReshapedSamples::new(x, p, q)?;
    let mut init = KronParams {
        factors: KroneckerFactors::identity(p, q),
        b_coeffs: None,
    };
    if let Some(st) = b_structure {
        if st.dim() != q {
            return Err(EstimationError::invalid(format!(
                "B structure has dimension {} but q = {q}",
                st.dim()
            )));
        }
        let tr = trace_re(&st.assemble(st.init_coeffs()));
        let coeffs: Vec<f64> = st.init_coeffs().iter().map(|c| c / tr).collect();
        init.factors.b = st.assemble(&coeffs);
        init.b_coeffs = Some(coeffs);
    }
    let mut mm = KronMm {
        samples,
        method,
        b_structure,
        inner_tol: INNER_TOL,
    };
    mm_drive(&mut mm, init, x, settings)
}
