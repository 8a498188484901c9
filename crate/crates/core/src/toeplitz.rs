//! Toeplitz and banded Toeplitz scatter estimation by circulant embedding.
//!
//! A symmetric Toeplitz matrix that extends to an `L × L` PSD circulant
//! matrix is `A diag(p) A^H` with `A` the first `K` rows of the unitary DFT
//! of size `L` and `p_j = p_{L-j} ≥ 0`. The Toeplitz estimator is the
//! rank-one MM on that dictionary. Banding adds the linear constraints
//! `r_j = 0` for `j > k`, handled in a reduced real problem over the
//! `⌊L/2⌋ + 1` distinct powers and solved through its dual.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{EstimationError, Result};
use crate::mm::{mm_drive, EstimatorResult, MmContext, MmSettings, MmStructure};
use crate::numerics::{chol_pd, dft_matrix, from_complex_matrix, Scalar};
use crate::rank_one::{estimate_rank_one, power_update, surrogate_params, RankOneDictionary};
use crate::tyler::SampleSet;

const DUAL_MAX_ITERS: usize = 200;
const DUAL_MAX_HALVINGS: usize = 60;
const DUAL_TOL: f64 = 1e-13;
const INFEASIBLE_DUAL_NORM: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct CirculantEmbedding {
    k: usize,
    l: usize,
    a_matrix: DMatrix<Complex64>,
}

/// `A = [I_K 0] F_L` with `L = 2K − 1` unless given.
pub fn build_embedding(k: usize, l: Option<usize>) -> Result<CirculantEmbedding> {
    if k == 0 {
        return Err(EstimationError::invalid("Toeplitz dimension must be positive"));
    }
    let l = l.unwrap_or(2 * k - 1);
    if l < 2 * k - 1 {
        return Err(EstimationError::invalid(format!(
            "embedding size {l} is below 2K - 1 = {}",
            2 * k - 1
        )));
    }
    let a_matrix = dft_matrix(l).rows(0, k).into_owned();
    Ok(CirculantEmbedding { k, l, a_matrix })
}

impl CirculantEmbedding {
    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        self.l
    }

    pub fn a_matrix(&self) -> &DMatrix<Complex64> {
        &self.a_matrix
    }

    pub fn dictionary(&self) -> RankOneDictionary<Complex64> {
        RankOneDictionary::trusted(self.a_matrix.clone())
    }

    /// `A diag(p) A^H`.
    pub fn assemble(&self, p: &[f64]) -> DMatrix<Complex64> {
        self.dictionary().assemble(p, 0.0)
    }
}

/// Largest deviation of any entry from the mean of its diagonal, relative to
/// the largest entry.
pub fn toeplitz_defect<T: Scalar>(r: &DMatrix<T>) -> f64 {
    let k = r.nrows();
    let scale = r.iter().map(|v| v.modulus()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for off in -(k as isize - 1)..k as isize {
        let entries: Vec<T> = (0..k)
            .filter_map(|i| {
                let j = i as isize + off;
                (0..k as isize).contains(&j).then(|| r[(i, j as usize)])
            })
            .collect();
        let mean = entries.iter().fold(T::zero(), |acc, v| acc + *v) * T::from_real(1.0 / entries.len() as f64);
        for v in entries {
            worst = worst.max((v - mean).modulus());
        }
    }
    worst / scale
}

fn complex_samples<T: Scalar>(x: &SampleSet<T>) -> SampleSet<Complex64> {
    x.to_complex()
}

fn map_result<T: Scalar>(res: EstimatorResult<Complex64>) -> EstimatorResult<T> {
    EstimatorResult {
        scatter: from_complex_matrix(&res.scatter),
        params: res.params,
        objective_trace: res.objective_trace,
        iterations: res.iterations,
        termination: res.termination,
        flags: res.flags,
    }
}

/// Toeplitz-constrained Tyler estimate with `L = 2K − 1`.
pub fn estimate_toeplitz<T: Scalar>(k: usize, x: &SampleSet<T>, settings: &MmSettings) -> Result<EstimatorResult<T>> {
    estimate_toeplitz_with(&build_embedding(k, None)?, x, settings)
}

/// Toeplitz-constrained Tyler estimate for a given embedding. Real samples
/// give a real symmetric result; complex samples a Hermitian one. `params`
/// holds the circulant powers `p`.
pub fn estimate_toeplitz_with<T: Scalar>(
    embedding: &CirculantEmbedding,
    x: &SampleSet<T>,
    settings: &MmSettings,
) -> Result<EstimatorResult<T>> {
    if x.dim() != embedding.dim() {
        return Err(EstimationError::invalid(format!(
            "embedding has dimension {} but samples have dimension {}",
            embedding.dim(),
            x.dim()
        )));
    }
    let res = estimate_rank_one(&embedding.dictionary(), &complex_samples(x), settings, 0.0)?;
    debug_assert!(
        T::FIELD == crate::numerics::Field::Complex || power_asymmetry(&res.params) <= 1e-8,
        "circulant powers lost their symmetry on real data"
    );
    Ok(map_result(res))
}

/// `max_j |p_j − p_{L−j}| / max_j p_j`.
pub fn power_asymmetry(p: &[f64]) -> f64 {
    let l = p.len();
    let scale = p.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    (1..l).map(|j| (p[j] - p[l - j]).abs()).fold(0.0, f64::max) / scale
}

/// Bandwidth constraint in the reduced real variables.
#[derive(Debug, Clone)]
pub struct BandedSpec {
    embedding: CirculantEmbedding,
    bandwidth: usize,
    constraint_matrix: DMatrix<f64>,
}

impl BandedSpec {
    pub fn new(embedding: CirculantEmbedding, bandwidth: usize) -> Result<Self> {
        let k = embedding.dim();
        if bandwidth >= k {
            return Err(EstimationError::invalid(format!(
                "bandwidth {bandwidth} must be below the dimension {k}"
            )));
        }
        let n = reduced_len(embedding.size());
        let a = embedding.a_matrix();
        let l = embedding.size();
        let constraint_matrix = DMatrix::from_fn(k - bandwidth - 1, n, |row, j| {
            let re = a[(bandwidth + 1 + row, j)].re;
            if is_unpaired(j, l) {
                re / std::f64::consts::SQRT_2
            } else {
                re
            }
        });
        Ok(Self {
            embedding,
            bandwidth,
            constraint_matrix,
        })
    }

    pub fn embedding(&self) -> &CirculantEmbedding {
        &self.embedding
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.constraint_matrix
    }

    /// Maps `(w, d)` over all `L` powers to the reduced `(w̃, d̃)`.
    ///
    /// With `p` symmetric, `w^T p + d^T p^{-1}` counts every paired index
    /// twice and indices `0` (and `L/2` for even `L`) once. Halving it and
    /// substituting `p̃_j = p_j / √2` on the unpaired indices gives
    /// `w̃_j = w_j / √2`, `d̃_j = d_j / (2√2)` there and the pair averages
    /// elsewhere, and `A p = 0` becomes `Ã p̃ = 0`.
    pub fn reduce(&self, w: &[f64], d: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let l = self.embedding.size();
        let n = reduced_len(l);
        let s2 = std::f64::consts::SQRT_2;
        let mut wt = DVector::zeros(n);
        let mut dt = DVector::zeros(n);
        for j in 0..n {
            if is_unpaired(j, l) {
                wt[j] = w[j] / s2;
                dt[j] = d[j] / (2.0 * s2);
            } else {
                wt[j] = 0.5 * (w[j] + w[l - j]);
                dt[j] = 0.5 * (d[j] + d[l - j]);
            }
        }
        (wt, dt)
    }

    /// Inverse of the variable change: symmetric `p` of length `L`.
    pub fn expand(&self, pt: &[f64]) -> Vec<f64> {
        let l = self.embedding.size();
        let mut p = vec![0.0; l];
        for (j, &v) in pt.iter().enumerate() {
            if is_unpaired(j, l) {
                p[j] = v * std::f64::consts::SQRT_2;
            } else {
                p[j] = v;
                p[l - j] = v;
            }
        }
        p
    }

    /// Reduced variables of a symmetric `p`.
    pub fn contract(&self, p: &[f64]) -> Vec<f64> {
        let l = self.embedding.size();
        (0..reduced_len(l))
            .map(|j| {
                if is_unpaired(j, l) {
                    p[j] / std::f64::consts::SQRT_2
                } else {
                    p[j]
                }
            })
            .collect()
    }
}

fn reduced_len(l: usize) -> usize {
    l / 2 + 1
}

fn is_unpaired(j: usize, l: usize) -> bool {
    j == 0 || 2 * j == l
}

/// Primal and dual solution of the reduced banded problem.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub p: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// `‖Ã p̃‖_∞ / (max|Ã| · ‖p̃‖_1)`.
    pub kkt_residual: f64,
}

/// Minimizer of `w̃^T p̃ + Σ d̃_j / p̃_j` over `p̃ ≥ 0` with `Ã p̃ = 0`.
pub fn banded_inner_update(spec: &BandedSpec, wt: &DVector<f64>, dt: &DVector<f64>) -> Result<ReducedSolution> {
    solve_reduced(spec.constraint_matrix(), wt, dt)
}

/// Solves `min w^T p + Σ d_j / p_j  s.t.  C p = 0, p ≥ 0` by maximizing the
/// concave dual `g(λ) = 2 Σ_j √(d_j (w_j + (C^T λ)_j))` with damped Newton,
/// then recovering `p_j = √(d_j / (w_j + (C^T λ)_j))`. Indices with
/// `d_j = 0` get `p_j = 0` and drop out of the dual.
pub fn solve_reduced(c: &DMatrix<f64>, w: &DVector<f64>, d: &DVector<f64>) -> Result<ReducedSolution> {
    let (m, n) = c.shape();
    if w.len() != n || d.len() != n {
        return Err(EstimationError::invalid("w and d must match the constraint columns"));
    }
    if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) || d.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(EstimationError::invalid("need w > 0 and d >= 0"));
    }
    if m > 0 && chol_pd(&(c * c.transpose())).is_none() {
        return Err(EstimationError::invalid("constraint matrix does not have full row rank"));
    }

    let active: Vec<bool> = d.iter().map(|v| *v > 0.0).collect();
    let c_max = c.amax().max(f64::MIN_POSITIVE);
    let w_max = w.amax();

    let primal = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |j, _| if active[j] { (d[j] / v[j]).sqrt() } else { 0.0 })
    };
    let dual_value = |v: &DVector<f64>| -> Option<f64> {
        let mut g = 0.0;
        for j in 0..n {
            if active[j] {
                if !(v[j] > 0.0) {
                    return None;
                }
                g += (d[j] * v[j]).sqrt();
            }
        }
        Some(2.0 * g)
    };

    let mut lambda = DVector::zeros(m);
    let mut v = w.clone();
    let mut p = primal(&v);
    if m == 0 {
        return Ok(ReducedSolution {
            p,
            lambda,
            iterations: 0,
            kkt_residual: 0.0,
        });
    }
    let mut g = dual_value(&v).expect("w > 0 is dual feasible");

    for it in 0..DUAL_MAX_ITERS {
        let grad = c * &p;
        let scale = c_max * p.sum().max(f64::MIN_POSITIVE);
        let residual = grad.amax() / scale;
        if residual <= DUAL_TOL {
            return Ok(ReducedSolution {
                p,
                lambda,
                iterations: it,
                kkt_residual: residual,
            });
        }
        if lambda.norm() > INFEASIBLE_DUAL_NORM * (1.0 + w_max) {
            return Err(EstimationError::InfeasibleConstraint(format!(
                "dual iterate diverged (|lambda| = {:.3e}); no p >= 0 with d/p finite satisfies the constraints",
                lambda.norm()
            )));
        }

        // -∇²g = C diag(p_j / (2 v_j)) C^T
        let mut cd = c.clone();
        for j in 0..n {
            let weight = if active[j] { p[j] / (2.0 * v[j]) } else { 0.0 };
            cd.column_mut(j).scale_mut(weight);
        }
        let h = &cd * c.transpose();
        let step = solve_shifted(&h, &grad);
        let slope = grad.dot(&step);
        if slope <= 4.0 * f64::EPSILON * g.abs() {
            // Ascent is below roundoff in g; keep full steps while they
            // still shrink the constraint residual.
            let trial = &lambda + &step;
            let tv = w + c.transpose() * &trial;
            if let Some(tg) = dual_value(&tv) {
                let tp = primal(&tv);
                let tres = (c * &tp).amax() / (c_max * tp.sum().max(f64::MIN_POSITIVE));
                if tres < 0.5 * residual {
                    lambda = trial;
                    v = tv;
                    g = tg;
                    p = tp;
                    continue;
                }
            }
            return Ok(ReducedSolution {
                p,
                lambda,
                iterations: it,
                kkt_residual: residual,
            });
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..DUAL_MAX_HALVINGS {
            let trial = &lambda + &step * t;
            let tv = w + c.transpose() * &trial;
            if let Some(tg) = dual_value(&tv) {
                if tg >= g + 1e-4 * t * slope {
                    lambda = trial;
                    v = tv;
                    g = tg;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(EstimationError::numerical(format!(
                "dual line search failed after {DUAL_MAX_HALVINGS} halvings (residual {residual:.3e})"
            )));
        }
        p = primal(&v);
    }
    Err(EstimationError::numerical(format!(
        "dual Newton did not converge in {DUAL_MAX_ITERS} iterations"
    )))
}

fn solve_shifted(h: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = h.nrows();
    let rhs_m = DMatrix::from_column_slice(n, 1, rhs.as_slice());
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    loop {
        let hs = h + DMatrix::identity(n, n) * shift;
        if let Some(f) = chol_pd(&hs) {
            return f.solve(&rhs_m).column(0).into_owned();
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 10.0 };
    }
}

struct BandedMm<'a> {
    spec: &'a BandedSpec,
    dict: RankOneDictionary<Complex64>,
}

impl MmStructure<Complex64> for BandedMm<'_> {
    type Params = Vec<f64>;

    fn assemble(&self, p: &Vec<f64>) -> Result<DMatrix<Complex64>> {
        let r = self.dict.assemble(p, 0.0);
        if chol_pd(&r).is_none() {
            return Err(EstimationError::numerical("banded iterate is not positive definite"));
        }
        Ok(r)
    }

    fn rescale(&self, p: &mut Vec<f64>, factor: f64) {
        p.iter_mut().for_each(|v| *v *= factor);
    }

    fn minimize_surrogate(&mut self, p: &Vec<f64>, ctx: &MmContext<'_, Complex64>) -> Result<Vec<f64>> {
        let s = surrogate_params(&self.dict, p, ctx.samples)?;
        let (wt, dt) = self.spec.reduce(s.w.as_slice(), s.d.as_slice());
        let sol = banded_inner_update(self.spec, &wt, &dt)?;
        Ok(self.spec.expand(sol.p.as_slice()))
    }

    fn flatten(&self, p: &Vec<f64>) -> Vec<f64> {
        p.clone()
    }
}

/// Banded Toeplitz Tyler estimate with `L = 2K − 1`.
pub fn estimate_banded_toeplitz<T: Scalar>(
    k: usize,
    bandwidth: usize,
    x: &SampleSet<T>,
    settings: &MmSettings,
) -> Result<EstimatorResult<T>> {
    let spec = BandedSpec::new(build_embedding(k, None)?, bandwidth)?;
    estimate_banded_toeplitz_with(&spec, x, settings)
}

pub fn estimate_banded_toeplitz_with<T: Scalar>(
    spec: &BandedSpec,
    x: &SampleSet<T>,
    settings: &MmSettings,
) -> Result<EstimatorResult<T>> {
    x.require_more_samples_than_dim()?;
    if x.dim() != spec.embedding().dim() {
        return Err(EstimationError::invalid(format!(
            "embedding has dimension {} but samples have dimension {}",
            spec.embedding().dim(),
            x.dim()
        )));
    }
    let mut mm = BandedMm {
        spec,
        dict: spec.embedding().dictionary(),
    };
    let init = vec![1.0; spec.embedding().size()];
    let res = mm_drive(&mut mm, init, &complex_samples(x), settings)?;
    Ok(map_result(res))
}

/// One unconstrained Toeplitz power update `p ← √(d / w)`, exposed for
/// checking the symmetry of `(w, d)` along a run.
pub fn toeplitz_power_step(
    embedding: &CirculantEmbedding,
    p: &[f64],
    x: &SampleSet<Complex64>,
) -> Result<(Vec<f64>, DVector<f64>, DVector<f64>)> {
    let s = surrogate_params(&embedding.dictionary(), p, x)?;
    Ok((power_update(s.w.as_slice(), s.d.as_slice()), s.w, s.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{estimate_linear, LinearStructure};
    use crate::numerics::{hermitian_eig, normalize_trace, trace_re};
    use crate::test_support::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_small_cases() {
        let e = build_embedding(1, None).unwrap();
        assert_eq!(e.size(), 1);
        assert!((e.a_matrix()[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let e = build_embedding(2, None).unwrap();
        assert_eq!(e.a_matrix().shape(), (2, 3));
        let f3 = dft_matrix(3);
        assert!((e.a_matrix() - f3.rows(0, 2)).norm() < 1e-15);
        assert!(build_embedding(3, Some(4)).is_err());
    }

    #[test]
    fn columns_are_conjugate_pairs() {
        for (k, l) in [(2, 3), (5, 9), (4, 10)] {
            let e = build_embedding(k, Some(l)).unwrap();
            let a = e.a_matrix();
            for j in 1..l {
                assert!((a.column(j) - a.column(l - j).map(|v| v.conj())).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_powers_give_real_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let e = build_embedding(8, None).unwrap();
        let mut p = vec![0.0; 15];
        for j in 0..=7 {
            let v = rng.random_range(0.0..2.0);
            p[j] = v;
            p[(15 - j) % 15] = v;
        }
        let r = e.assemble(&p);
        assert!(toeplitz_defect(&r) <= 1e-12);
        assert!(r.iter().all(|v| v.im.abs() <= 1e-12));
        assert!(hermitian_eig(&r).unwrap().eigenvalues.min() >= -1e-12);
    }

    #[test]
    fn gaussian_data_gives_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random_real_samples(5, 5000, &mut rng);
        let res = estimate_toeplitz(5, &x, &MmSettings::default()).unwrap();
        assert!((&res.scatter - DMatrix::identity(5, 5) / 5.0).norm() <= 0.05);
        assert!(toeplitz_defect(&res.scatter) <= 1e-10);
        assert!((trace_re(&res.scatter) - 1.0).abs() < 1e-12);
        assert!(power_asymmetry(&res.params) <= 1e-8);
    }

    #[test]
    fn w_and_d_stay_symmetric_on_real_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = heavy_tailed_samples(&ar_toeplitz(6, 0.6), 20, &mut rng).to_complex();
        let e = build_embedding(6, None).unwrap();
        let l = e.size();
        let mut p = vec![1.0; l];
        for _ in 0..50 {
            let (next, w, d) = toeplitz_power_step(&e, &p, &x).unwrap();
            for j in 1..l {
                assert!((w[j] - w[l - j]).abs() <= 1e-10 * w.amax());
                assert!((d[j] - d[l - j]).abs() <= 1e-10 * d.amax());
            }
            p = next;
        }
    }

    #[test]
    fn circulant_estimate_is_close_to_linear_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = heavy_tailed_samples(&ar_toeplitz(8, 0.8), 40, &mut rng);
        let s = MmSettings {
            tol: 1e-10,
            max_iter: 5000,
            ..MmSettings::default()
        };
        let a = estimate_toeplitz(8, &x, &s).unwrap();
        let b = estimate_linear(&LinearStructure::toeplitz(8).unwrap(), &x, &s).unwrap();
        let (fa, fb) = (a.final_objective(), b.final_objective());
        assert!(fa >= fb - 1e-9, "circulant subset cannot beat the full Toeplitz set");
        assert!((fa - fb).abs() <= 1e-3 * fb.abs().max(1.0), "{fa} vs {fb}");
        assert!(a.is_descent(1e-10));
    }

    #[test]
    fn complex_data_gives_hermitian_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let x = random_complex_samples(4, 30, &mut rng);
        let res = estimate_toeplitz(4, &x, &MmSettings::default()).unwrap();
        assert!(toeplitz_defect(&res.scatter) <= 1e-10);
        assert!(crate::numerics::hermitian_defect(&res.scatter) <= 1e-12);
    }

    #[test]
    fn no_constraints_gives_closed_form() {
        let w = DVector::from_row_slice(&[1.0, 2.0, 4.0]);
        let d = DVector::from_row_slice(&[4.0, 8.0, 0.0]);
        let sol = solve_reduced(&DMatrix::zeros(0, 3), &w, &d).unwrap();
        assert_eq!(sol.p.as_slice(), &[2.0, 2.0, 0.0]);
    }

    #[test]
    fn sum_to_zero_is_infeasible() {
        let w = DVector::from_element(4, 1.0);
        let d = DVector::from_element(4, 1.0);
        let err = solve_reduced(&DMatrix::from_element(1, 4, 1.0), &w, &d).unwrap_err();
        assert!(matches!(err, EstimationError::InfeasibleConstraint(_)), "{err:?}");
    }

    /// Equality-constrained Newton on `w^T p + Σ d/p − μ Σ log p` from a
    /// strictly feasible point, with `μ` driven down to 1e-10.
    fn barrier_oracle(c: &DMatrix<f64>, w: &DVector<f64>, d: &DVector<f64>, start: &DVector<f64>) -> DVector<f64> {
        let (m, n) = c.shape();
        let mut p = start.clone();
        let phi = |p: &DVector<f64>, mu: f64| -> f64 {
            (0..n).map(|j| w[j] * p[j] + d[j] / p[j] - mu * p[j].ln()).sum()
        };
        let mut mu = 1e-2;
        while mu >= 1e-10 {
            for _ in 0..100 {
                let grad = DVector::from_fn(n, |j, _| w[j] - d[j] / (p[j] * p[j]) - mu / p[j]);
                let hdiag = DVector::from_fn(n, |j, _| 2.0 * d[j] / p[j].powi(3) + mu / (p[j] * p[j]));
                let mut kkt = DMatrix::zeros(n + m, n + m);
                for j in 0..n {
                    kkt[(j, j)] = hdiag[j];
                }
                kkt.view_mut((n, 0), (m, n)).copy_from(c);
                kkt.view_mut((0, n), (n, m)).copy_from(&c.transpose());
                let mut rhs = DVector::zeros(n + m);
                rhs.rows_mut(0, n).copy_from(&(-&grad));
                let sol = kkt.lu().solve(&rhs).unwrap();
                let step = sol.rows(0, n).into_owned();
                let dec = -grad.dot(&step);
                if dec < 1e-20 {
                    break;
                }
                let mut t = 1.0;
                let f0 = phi(&p, mu);
                loop {
                    let trial = &p + &step * t;
                    if trial.iter().all(|v| *v > 0.0) && phi(&trial, mu) <= f0 - 1e-4 * t * dec {
                        p = trial;
                        break;
                    }
                    t *= 0.5;
                    if t < 1e-20 {
                        break;
                    }
                }
            }
            mu *= 0.1;
        }
        p
    }

    #[test]
    fn dual_matches_barrier_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..20 {
            let n = 9;
            let p0 = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
            let mut c = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            for mut row in c.row_iter_mut() {
                let proj = row.dot(&p0.transpose()) / p0.norm_squared();
                row -= p0.transpose() * proj;
            }
            let w = DVector::from_fn(n, |_, _| rng.random_range(0.2..3.0));
            let d = DVector::from_fn(n, |_, _| rng.random_range(0.2..3.0));
            let sol = solve_reduced(&c, &w, &d).unwrap();
            let oracle = barrier_oracle(&c, &w, &d, &p0);
            let f = |p: &DVector<f64>| (0..n).map(|j| w[j] * p[j] + d[j] / p[j]).sum::<f64>();
            assert!((f(&sol.p) - f(&oracle)).abs() <= 1e-6, "{} vs {}", f(&sol.p), f(&oracle));
            assert!(sol.kkt_residual <= 1e-8, "{} after {}", sol.kkt_residual, sol.iterations);
            let v = &w + c.transpose() * &sol.lambda;
            for j in 0..n {
                assert!((sol.p[j] - (d[j] / v[j]).sqrt()).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn reduction_round_trips() {
        for l in [5usize, 6, 9] {
            let e = build_embedding(3, Some(l)).unwrap();
            let spec = BandedSpec::new(e.clone(), 0).unwrap();
            let mut p = vec![0.0; l];
            for j in 0..=l / 2 {
                p[j] = 1.0 + j as f64;
                p[(l - j) % l] = 1.0 + j as f64;
            }
            let pt = spec.contract(&p);
            assert_eq!(spec.expand(&pt), p);
            // Ã p̃ is a fixed multiple of the banned lags of A p
            let ap = e.a_matrix() * DVector::from_iterator(l, p.iter().map(|v| Complex64::from(*v)));
            let cp = spec.constraint_matrix() * DVector::from_vec(pt.clone());
            for row in 0..cp.len() {
                assert!((ap[row + 1].re - 2.0 * cp[row]).abs() < 1e-12);
            }
            // objective halves
            let w: Vec<f64> = (0..l).map(|j| 1.0 + (j * j % 7) as f64).collect();
            let d: Vec<f64> = (0..l).map(|j| 0.5 + (j % 3) as f64).collect();
            let (wt, dt) = spec.reduce(&w, &d);
            let full: f64 = (0..l).map(|j| w[j] * p[j] + d[j] / p[j]).sum();
            let red: f64 = (0..pt.len()).map(|j| wt[j] * pt[j] + dt[j] / pt[j]).sum();
            assert!((full - 2.0 * red).abs() < 1e-12);
        }
    }

    #[test]
    fn full_bandwidth_matches_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let x = heavy_tailed_samples(&ar_toeplitz(6, 0.5), 25, &mut rng);
        let a = estimate_banded_toeplitz(6, 5, &x, &MmSettings::default()).unwrap();
        let b = estimate_toeplitz(6, &x, &MmSettings::default()).unwrap();
        assert!((a.scatter - b.scatter).norm() <= 1e-6);
    }

    #[test]
    fn zero_bandwidth_gives_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let x = heavy_tailed_samples(&ar_toeplitz(5, 0.9), 20, &mut rng);
        let res = estimate_banded_toeplitz(5, 0, &x, &MmSettings::default()).unwrap();
        assert!((&res.scatter - DMatrix::identity(5, 5) / 5.0).norm() <= 1e-8);
    }

    #[test]
    fn banded_estimate_is_banded_toeplitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let x = heavy_tailed_samples(&ar_toeplitz(8, 0.4), 30, &mut rng);
        let res = estimate_banded_toeplitz(8, 2, &x, &MmSettings::default()).unwrap();
        assert!(res.is_descent(1e-10));
        assert!(toeplitz_defect(&res.scatter) <= 1e-10);
        for i in 0..8usize {
            for j in 0..8usize {
                if i.abs_diff(j) > 2 {
                    assert!(res.scatter[(i, j)].abs() <= 1e-8);
                }
            }
        }
        let r = normalize_trace(&res.scatter).unwrap();
        assert!(hermitian_eig(&r).unwrap().eigenvalues.min() > 0.0);
    }
}
