//! Scatter estimation over linear structures `R = Σ_j a_j B_j ⪰ 0`.
//!
//! Each MM step minimizes the convex surrogate
//! `f(a) = Tr(R_t^{-1} R(a)) + Tr(M_t R(a)^{-1})` over the coefficients with
//! a damped Newton method. `f` blows up at the boundary of the PD cone when
//! `M_t ≻ 0`, so a Cholesky test in the line search is all the feasibility
//! handling it needs. The same problem can be posed as an SDP through the
//! Schur complement `[[S, I], [I, R]] ⪰ 0`; that route is not used here.

use nalgebra::{DMatrix, DVector};

use crate::error::{EstimationError, Result};
use crate::mm::{mm_drive, EstimatorResult, MmContext, MmSettings, MmStructure};
use crate::numerics::{chol_pd, hermitian_defect, hermitian_eig, trace_product_re, Scalar};
use crate::tyler::{weighted_scatter, SampleSet};

/// Gradient tolerance of the inner Newton solve, relative to `1 + |f|`.
pub const INNER_GRADIENT_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 200;
const MAX_HALVINGS: usize = 60;
const ARMIJO: f64 = 1e-4;

/// Linear span of Hermitian basis matrices with a PD starting point.
#[derive(Debug, Clone)]
pub struct LinearStructure<T: Scalar> {
    dim: usize,
    basis: Vec<DMatrix<T>>,
    init_coeffs: Vec<f64>,
}

impl<T: Scalar> LinearStructure<T> {
    pub fn new(basis: Vec<DMatrix<T>>, init_coeffs: Vec<f64>) -> Result<Self> {
        let first = basis
            .first()
            .ok_or_else(|| EstimationError::invalid("linear structure needs at least one basis matrix"))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(EstimationError::invalid("basis matrices must be non-empty"));
        }
        if init_coeffs.len() != basis.len() {
            return Err(EstimationError::invalid(format!(
                "{} initial coefficients for {} basis matrices",
                init_coeffs.len(),
                basis.len()
            )));
        }
        for (j, b) in basis.iter().enumerate() {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(EstimationError::invalid(format!("basis matrix {j} is not {dim}x{dim}")));
            }
            if hermitian_defect(b) > 1e-12 {
                return Err(EstimationError::invalid(format!("basis matrix {j} is not Hermitian")));
            }
        }

        let l = basis.len();
        let gram = DMatrix::from_fn(l, l, |i, j| trace_product_re(&basis[i], &basis[j]));
        let eig = hermitian_eig(&gram)?;
        let (max, min) = (eig.eigenvalues[0], eig.eigenvalues[l - 1]);
        if !(min > 1e-10 * max.max(1e-300)) {
            return Err(EstimationError::invalid("basis matrices are linearly dependent"));
        }

        let s = Self {
            dim,
            basis,
            init_coeffs,
        };
        if chol_pd(&s.assemble(&s.init_coeffs)).is_none() {
            return Err(EstimationError::invalid(
                "initial coefficients do not give a positive definite matrix",
            ));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[DMatrix<T>] {
        &self.basis
    }

    pub fn init_coeffs(&self) -> &[f64] {
        &self.init_coeffs
    }

    pub fn assemble(&self, coeffs: &[f64]) -> DMatrix<T> {
        let mut r = DMatrix::zeros(self.dim, self.dim);
        for (b, &a) in self.basis.iter().zip(coeffs) {
            r += b * T::from_real(a);
        }
        r
    }

    /// Symmetric Toeplitz matrices: `B_m` is the indicator of `|i - j| = m`.
    pub fn toeplitz(k: usize) -> Result<Self> {
        Self::banded_toeplitz(k, k.saturating_sub(1))
    }

    /// Symmetric Toeplitz matrices with `r_m = 0` for `m > bandwidth`.
    pub fn banded_toeplitz(k: usize, bandwidth: usize) -> Result<Self> {
        if k == 0 || bandwidth >= k {
            return Err(EstimationError::invalid(format!(
                "banded Toeplitz needs 0 <= bandwidth < K, got bandwidth {bandwidth} for K = {k}"
            )));
        }
        let basis = (0..=bandwidth)
            .map(|m| DMatrix::from_fn(k, k, |i, j| if i.abs_diff(j) == m { T::one() } else { T::zero() }))
            .collect();
        Self::new(basis, unit_first(bandwidth + 1))
    }

    /// Symmetric circulant matrices.
    pub fn circulant(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(EstimationError::invalid("dimension must be positive"));
        }
        let basis = (0..=k / 2)
            .map(|m| {
                DMatrix::from_fn(k, k, |i, j| {
                    let d = i.abs_diff(j);
                    if d.min(k - d) == m {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
            })
            .collect();
        Self::new(basis, unit_first(k / 2 + 1))
    }

    pub fn diagonal(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(EstimationError::invalid("dimension must be positive"));
        }
        let basis = (0..k)
            .map(|m| DMatrix::from_fn(k, k, |i, j| if i == m && j == m { T::one() } else { T::zero() }))
            .collect();
        Self::new(basis, vec![1.0; k])
    }

    /// All real symmetric matrices, plus the imaginary antisymmetric
    /// directions when the field is complex (i.e. all Hermitian matrices).
    pub fn full(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(EstimationError::invalid("dimension must be positive"));
        }
        let mut basis = Vec::new();
        let mut init = Vec::new();
        for i in 0..k {
            let mut b = DMatrix::zeros(k, k);
            b[(i, i)] = T::one();
            basis.push(b);
            init.push(1.0);
        }
        for i in 0..k {
            for j in i + 1..k {
                let mut b = DMatrix::zeros(k, k);
                b[(i, j)] = T::one();
                b[(j, i)] = T::one();
                basis.push(b);
                init.push(0.0);
                if let Some(im) = T::imag_unit() {
                    let mut b = DMatrix::zeros(k, k);
                    b[(i, j)] = im;
                    b[(j, i)] = im.conjugate();
                    basis.push(b);
                    init.push(0.0);
                }
            }
        }
        Self::new(basis, init)
    }

    /// Preset by name: `toeplitz`, `banded:<k>`, `circulant`, `diagonal`, `full`.
    pub fn from_name(name: &str, k: usize) -> Result<Self> {
        match name {
            "toeplitz" => Self::toeplitz(k),
            "circulant" => Self::circulant(k),
            "diagonal" => Self::diagonal(k),
            "full" => Self::full(k),
            other => match other.strip_prefix("banded:") {
                Some(bw) => {
                    let bw = bw
                        .parse()
                        .map_err(|_| EstimationError::invalid(format!("bad bandwidth in '{other}'")))?;
                    Self::banded_toeplitz(k, bw)
                }
                None => Err(EstimationError::invalid(format!("unknown linear structure '{other}'"))),
            },
        }
    }
}

fn unit_first(len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[0] = 1.0;
    v
}

/// The inner surrogate `f(a) = Tr(R_t^{-1} R(a)) + Tr(M_t R(a)^{-1}) - μ log det R(a)`.
pub struct InnerProblem<'a, T: Scalar> {
    structure: &'a LinearStructure<T>,
    m_t: &'a DMatrix<T>,
    linear: DVector<f64>,
    barrier: f64,
}

/// Value, gradient and Hessian of the inner problem at one point.
#[derive(Debug, Clone)]
pub struct InnerEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl<'a, T: Scalar> InnerProblem<'a, T> {
    pub fn new(structure: &'a LinearStructure<T>, r_t: &DMatrix<T>, m_t: &'a DMatrix<T>) -> Result<Self> {
        let factor = chol_pd(r_t).ok_or_else(|| EstimationError::invalid("R_t is not positive definite"))?;
        let r_inv = factor.inverse();
        let linear = DVector::from_iterator(
            structure.len(),
            structure.basis.iter().map(|b| trace_product_re(&r_inv, b)),
        );
        Ok(Self {
            structure,
            m_t,
            linear,
            barrier: 0.0,
        })
    }

    pub fn with_barrier(mut self, mu: f64) -> Self {
        self.barrier = mu;
        self
    }

    /// `f(a)`, or `None` outside the PD domain.
    pub fn value(&self, a: &[f64]) -> Option<f64> {
        let r = self.structure.assemble(a);
        let factor = chol_pd(&r)?;
        let s = factor.inverse();
        let mut v = self.linear.iter().zip(a).map(|(c, x)| c * x).sum::<f64>() + trace_product_re(self.m_t, &s);
        if self.barrier > 0.0 {
            v -= self.barrier * factor.ln_det();
        }
        Some(v)
    }

    pub fn gradient(&self, a: &[f64]) -> Option<DVector<f64>> {
        self.evaluate(a, false).map(|e| e.gradient)
    }

    pub fn evaluate(&self, a: &[f64], with_hessian: bool) -> Option<InnerEval> {
        let r = self.structure.assemble(a);
        let factor = chol_pd(&r)?;
        let s = factor.inverse();
        let g = &s * self.m_t * &s;
        let basis = &self.structure.basis;
        let l = basis.len();

        let mut value = self.linear.iter().zip(a).map(|(c, x)| c * x).sum::<f64>() + trace_product_re(self.m_t, &s);
        if self.barrier > 0.0 {
            value -= self.barrier * factor.ln_det();
        }

        let sb: Vec<DMatrix<T>> = basis.iter().map(|b| &s * b).collect();
        let gb: Vec<DMatrix<T>> = basis.iter().map(|b| &g * b).collect();

        let mut gradient = self.linear.clone();
        for j in 0..l {
            gradient[j] -= trace_product_re(&g, &basis[j]);
            if self.barrier > 0.0 {
                gradient[j] -= self.barrier * trace_product_re(&s, &basis[j]);
            }
        }

        let mut hessian = DMatrix::zeros(if with_hessian { l } else { 0 }, if with_hessian { l } else { 0 });
        if with_hessian {
            for j in 0..l {
                for k in 0..=j {
                    // d²/da_j da_k Tr(M R^{-1}) = 2 Re Tr(S B_k G B_j)
                    let mut h = 2.0 * trace_product_re(&sb[k], &gb[j]);
                    if self.barrier > 0.0 {
                        h += self.barrier * trace_product_re(&sb[j], &sb[k]);
                    }
                    hessian[(j, k)] = h;
                    hessian[(k, j)] = h;
                }
            }
        }
        Some(InnerEval {
            value,
            gradient,
            hessian,
        })
    }

    /// Damped Newton from `start` until `‖∇f‖ ≤ grad_tol·(1 + |f|)`.
    pub fn minimize(&self, start: &[f64], grad_tol: f64) -> Result<Vec<f64>> {
        let mut a = start.to_vec();
        let mut current = self
            .evaluate(&a, true)
            .ok_or_else(|| EstimationError::invalid("inner solve started outside the PD domain"))?;

        for _ in 0..MAX_NEWTON_ITERS {
            let gnorm = current.gradient.norm();
            if gnorm <= grad_tol * (1.0 + current.value.abs()) {
                return Ok(a);
            }
            let step = newton_direction(&current.hessian, &current.gradient);
            let slope = current.gradient.dot(&step);
            let noise = 4.0 * f64::EPSILON * (1.0 + current.value.abs());

            // Halve until Armijo holds, but only while the decrease it asks
            // for is above roundoff; below that, a step that rounds back to
            // `a` would pass the test without making progress.
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                if -t * slope <= noise {
                    break;
                }
                let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(x, d)| x + t * d).collect();
                if let Some(v) = self.value(&trial) {
                    if v <= current.value + ARMIJO * t * slope {
                        accepted = Some(trial);
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some(next) => {
                    a = next;
                    current = self
                        .evaluate(&a, true)
                        .ok_or_else(|| EstimationError::numerical("accepted Newton step left the PD domain"))?;
                }
                None if -t * slope <= noise => {
                    // The decrement is at roundoff level, so function values
                    // can no longer tell steps apart. Keep taking full steps
                    // while they shrink the gradient.
                    let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                    match self.evaluate(&trial, true) {
                        Some(next) if next.gradient.norm() < 0.5 * gnorm && next.value <= current.value + noise => {
                            a = trial;
                            current = next;
                        }
                        _ => return Ok(a),
                    }
                }
                None => {
                    if gnorm <= 1e3 * grad_tol * (1.0 + current.value.abs()) {
                        return Ok(a);
                    }
                    return Err(EstimationError::numerical(format!(
                        "inner line search failed after {MAX_HALVINGS} halvings \
                         (f = {:.6e}, |grad| = {gnorm:.3e}, slope = {slope:.3e})",
                        current.value
                    )));
                }
            }
        }
        Err(EstimationError::numerical(format!(
            "inner Newton solve did not reach |grad| <= {grad_tol:e} in {MAX_NEWTON_ITERS} iterations"
        )))
    }
}

fn newton_direction(hessian: &DMatrix<f64>, gradient: &DVector<f64>) -> DVector<f64> {
    let neg = -gradient;
    if let Some(f) = chol_pd(hessian) {
        let rhs = DMatrix::from_column_slice(neg.len(), 1, neg.as_slice());
        return f.solve(&rhs).column(0).into_owned();
    }
    // indefinite only through roundoff; shift until it factors
    let scale = hessian.diagonal().amax().max(1e-300);
    let mut shift = 1e-12 * scale;
    loop {
        let h = hessian + DMatrix::identity(hessian.nrows(), hessian.ncols()) * shift;
        if let Some(f) = chol_pd(&h) {
            let rhs = DMatrix::from_column_slice(neg.len(), 1, neg.as_slice());
            return f.solve(&rhs).column(0).into_owned();
        }
        shift *= 10.0;
        if shift > 1e12 * scale {
            return neg;
        }
    }
}

/// One MM update of the coefficients: minimizes the surrogate at `(R_t, M_t)`
/// warm-started from `a_t`.
pub fn inner_update<T: Scalar>(
    structure: &LinearStructure<T>,
    a_t: &[f64],
    r_t: &DMatrix<T>,
    m_t: &DMatrix<T>,
) -> Result<Vec<f64>> {
    if a_t.len() != structure.len() {
        return Err(EstimationError::invalid("coefficient vector has the wrong length"));
    }
    if chol_pd(&structure.assemble(a_t)).is_none() {
        return Err(EstimationError::invalid("R(a_t) is not positive definite"));
    }
    let problem = InnerProblem::new(structure, r_t, m_t)?;
    if chol_pd(m_t).is_some() {
        return problem.minimize(a_t, INNER_GRADIENT_TOL);
    }

    // Singular M_t: keep the domain open with a small log-det barrier, then
    // try to polish without it.
    let mu = 1e-10 * crate::numerics::trace_re(m_t).max(f64::MIN_POSITIVE);
    let barrier = InnerProblem::new(structure, r_t, m_t)?.with_barrier(mu);
    let a_barrier = barrier.minimize(a_t, INNER_GRADIENT_TOL)?;
    match problem.minimize(&a_barrier, INNER_GRADIENT_TOL) {
        Ok(a) => Ok(a),
        Err(_) => Ok(a_barrier),
    }
}

struct LinearMm<'a, T: Scalar> {
    structure: &'a LinearStructure<T>,
}

impl<T: Scalar> MmStructure<T> for LinearMm<'_, T> {
    type Params = Vec<f64>;

    fn assemble(&self, params: &Vec<f64>) -> Result<DMatrix<T>> {
        Ok(self.structure.assemble(params))
    }

    fn rescale(&self, params: &mut Vec<f64>, factor: f64) {
        params.iter_mut().for_each(|a| *a *= factor);
    }

    fn minimize_surrogate(&mut self, params: &Vec<f64>, ctx: &MmContext<'_, T>) -> Result<Vec<f64>> {
        inner_update(self.structure, params, ctx.scatter, ctx.weighted_scatter()?)
    }

    fn flatten(&self, params: &Vec<f64>) -> Vec<f64> {
        params.clone()
    }
}

/// Tyler's estimator constrained to a linear structure (Algorithm 1 with a
/// Newton inner solver). `params` of the result are the coefficients of the
/// trace-normalized estimate.
pub fn estimate_linear<T: Scalar>(
    structure: &LinearStructure<T>,
    x: &SampleSet<T>,
    settings: &MmSettings,
) -> Result<EstimatorResult<T>> {
    estimate_linear_from(structure, x, settings, structure.init_coeffs())
}

pub fn estimate_linear_from<T: Scalar>(
    structure: &LinearStructure<T>,
    x: &SampleSet<T>,
    settings: &MmSettings,
    init: &[f64],
) -> Result<EstimatorResult<T>> {
    x.require_more_samples_than_dim()?;
    if structure.dim() != x.dim() {
        return Err(EstimationError::invalid(format!(
            "structure has dimension {} but samples have dimension {}",
            structure.dim(),
            x.dim()
        )));
    }
    if init.len() != structure.len() || chol_pd(&structure.assemble(init)).is_none() {
        return Err(EstimationError::invalid("initial coefficients are infeasible"));
    }
    mm_drive(&mut LinearMm { structure }, init.to_vec(), x, settings)
}

/// Norm of the gradient of Tyler's cost projected onto the structure's span,
/// scaled by `‖R‖_F` so that it does not depend on the scale of `R`.
pub fn stationarity_residual<T: Scalar>(
    structure: &LinearStructure<T>,
    r: &DMatrix<T>,
    x: &SampleSet<T>,
) -> Result<f64> {
    let factor = chol_pd(r).ok_or_else(|| EstimationError::invalid("R is not positive definite"))?;
    let s = factor.inverse();
    let m = weighted_scatter(r, x)?;
    let grad = &s - &s * m * &s;
    let l = structure.len();
    let g = DVector::from_iterator(l, structure.basis.iter().map(|b| trace_product_re(&grad, b)));
    let gram = DMatrix::from_fn(l, l, |i, j| trace_product_re(&structure.basis[i], &structure.basis[j]));
    let gram_factor = chol_pd(&gram).ok_or_else(|| EstimationError::numerical("singular Gram matrix"))?;
    let c = gram_factor.solve(&DMatrix::from_column_slice(l, 1, g.as_slice()));
    let sq = c.column(0).dot(&g).max(0.0);
    Ok(sq.sqrt() * r.norm())
}
