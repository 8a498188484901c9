//! Generic majorization-minimization driver.
//!
//! A structure supplies a parameterization `params -> R` and a routine that
//! minimizes its surrogate at the current iterate. The driver handles trace
//! normalization, objective bookkeeping and termination.

use std::cell::OnceCell;

use nalgebra::DMatrix;

use crate::error::{EstimationError, Result};
use crate::numerics::{relative_change, trace_re, Scalar};
use crate::tyler::{tyler_cost, weighted_scatter, SampleSet};

/// Objective values below this floor mean the cost is unbounded below on
/// the constraint set (the data violate the existence condition).
pub const DEGENERATE_OBJECTIVE_FLOOR: f64 = -1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MmSettings {
    /// Relative Frobenius change of the trace-normalized iterate that ends the run.
    pub tol: f64,
    pub max_iter: usize,
    /// Record the objective at every iterate (otherwise only first and last).
    pub record_trace: bool,
}

impl Default for MmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            record_trace: true,
        }
    }
}

impl MmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(EstimationError::invalid("MM settings need tol > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
}

/// Non-fatal conditions encountered during a run.
#[derive(Debug, Clone, PartialEq)]
pub enum ResultFlag {
    /// Tied eigenvalues at the spike/noise split; the direction choice was arbitrary.
    DegenerateSpectrum { iteration: usize },
    /// The rank-one run was restarted with this epsilon after a singular iterate.
    EpsilonFallback { epsilon: f64 },
}

#[derive(Debug, Clone)]
pub struct EstimatorResult<T: Scalar> {
    /// Final scatter matrix, trace-normalized.
    pub scatter: DMatrix<T>,
    /// Structure-specific parameters of the final iterate.
    pub params: Vec<f64>,
    /// Tyler's cost at each iterate, starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub flags: Vec<ResultFlag>,
}

impl<T: Scalar> EstimatorResult<T> {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("objective trace is never empty")
    }

    /// Largest increase between consecutive objective values (≤ 0 for a clean descent).
    pub fn max_objective_increase(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_descent(&self, slack: f64) -> bool {
        self.objective_trace.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Data available to a surrogate minimizer at iterate `t`.
pub struct MmContext<'a, T: Scalar> {
    pub iteration: usize,
    pub samples: &'a SampleSet<T>,
    /// Current iterate, trace-normalized.
    pub scatter: &'a DMatrix<T>,
    scatter_weighted: OnceCell<DMatrix<T>>,
}

impl<'a, T: Scalar> MmContext<'a, T> {
    pub fn new(iteration: usize, samples: &'a SampleSet<T>, scatter: &'a DMatrix<T>) -> Self {
        Self {
            iteration,
            samples,
            scatter,
            scatter_weighted: OnceCell::new(),
        }
    }

    /// `M_t`, computed on first use.
    pub fn weighted_scatter(&self) -> Result<&DMatrix<T>> {
        if let Some(m) = self.scatter_weighted.get() {
            return Ok(m);
        }
        let m = weighted_scatter(self.scatter, self.samples)?;
        Ok(self.scatter_weighted.get_or_init(|| m))
    }
}

/// A constraint set handled by [`mm_drive`].
pub trait MmStructure<T: Scalar> {
    type Params: Clone;

    /// The (possibly unnormalized) scatter matrix described by `params`.
    fn assemble(&self, params: &Self::Params) -> Result<DMatrix<T>>;

    /// Rescales parameters so the assembled matrix scales by `factor`.
    fn rescale(&self, params: &mut Self::Params, factor: f64);

    /// Whether `R` and `cR` are always both feasible. When false the driver
    /// leaves the parameters unnormalized and only normalizes what it reports.
    fn scale_invariant(&self) -> bool {
        true
    }

    /// Minimizes the structure's surrogate at the current iterate.
    fn minimize_surrogate(&mut self, params: &Self::Params, ctx: &MmContext<'_, T>) -> Result<Self::Params>;

    /// Tyler's cost of the assembled matrix.
    fn objective(&self, _params: &Self::Params, scatter: &DMatrix<T>, samples: &SampleSet<T>) -> Result<f64> {
        tyler_cost(scatter, samples)
    }

    fn flatten(&self, params: &Self::Params) -> Vec<f64>;

    fn flags(&self) -> Vec<ResultFlag> {
        Vec::new()
    }
}

fn normalized<T: Scalar, S: MmStructure<T>>(structure: &S, params: &mut S::Params) -> Result<DMatrix<T>> {
    let raw = structure.assemble(params)?;
    let tr = trace_re(&raw);
    if !(tr.is_finite() && tr > 0.0) {
        return Err(EstimationError::numerical(format!("iterate has trace {tr}")));
    }
    if structure.scale_invariant() {
        structure.rescale(params, 1.0 / tr);
    }
    Ok(raw * T::from_real(1.0 / tr))
}

fn checked_objective<T: Scalar, S: MmStructure<T>>(
    structure: &S,
    params: &S::Params,
    scatter: &DMatrix<T>,
    samples: &SampleSet<T>,
) -> Result<f64> {
    let value = structure.objective(params, scatter, samples)?;
    if value.is_nan() {
        return Err(EstimationError::numerical("objective is NaN"));
    }
    if value < DEGENERATE_OBJECTIVE_FLOOR {
        return Err(EstimationError::DegenerateData(format!(
            "objective {value:e} fell below {DEGENERATE_OBJECTIVE_FLOOR:e}; cost is unbounded below"
        )));
    }
    Ok(value)
}

/// Runs MM from `init` until the trace-normalized iterate moves by at most
/// `settings.tol` (relative Frobenius) or `settings.max_iter` updates.
pub fn mm_drive<T: Scalar, S: MmStructure<T>>(
    structure: &mut S,
    init: S::Params,
    samples: &SampleSet<T>,
    settings: &MmSettings,
) -> Result<EstimatorResult<T>> {
    settings.validate()?;
    let mut params = init;
    let mut scatter = normalized(structure, &mut params)?;
    if scatter.nrows() != samples.dim() {
        return Err(EstimationError::invalid(format!(
            "structure has dimension {} but samples have dimension {}",
            scatter.nrows(),
            samples.dim()
        )));
    }
    let mut objective = checked_objective(structure, &params, &scatter, samples)?;
    let mut trace = vec![objective];
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    for t in 1..=settings.max_iter {
        let ctx = MmContext::new(t, samples, &scatter);
        let mut next = structure
            .minimize_surrogate(&params, &ctx)
            .map_err(|e| e.at_iteration(t))?;
        let next_scatter = normalized(structure, &mut next).map_err(|e| e.at_iteration(t))?;
        let change = relative_change(&next_scatter, &scatter);

        params = next;
        scatter = next_scatter;
        iterations = t;

        let last = change <= settings.tol || t == settings.max_iter;
        if settings.record_trace || last {
            objective = checked_objective(structure, &params, &scatter, samples).map_err(|e| e.at_iteration(t))?;
            trace.push(objective);
        }
        if change <= settings.tol {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(EstimatorResult {
        params: structure.flatten(&params),
        scatter,
        objective_trace: trace,
        iterations,
        termination,
        flags: structure.flags(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::*;
    use crate::tyler::{fixed_point_residual, tyler_unconstrained, Unconstrained};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Frozen;

    impl MmStructure<f64> for Frozen {
        type Params = DMatrix<f64>;
        fn assemble(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
            Ok(p.clone())
        }
        fn rescale(&self, p: &mut DMatrix<f64>, factor: f64) {
            *p *= factor;
        }
        fn minimize_surrogate(&mut self, p: &DMatrix<f64>, _: &MmContext<'_, f64>) -> Result<DMatrix<f64>> {
            Ok(p.clone())
        }
        fn flatten(&self, _: &DMatrix<f64>) -> Vec<f64> {
            Vec::new()
        }
    }

    struct Failing;

    impl MmStructure<f64> for Failing {
        type Params = DMatrix<f64>;
        fn assemble(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
            Ok(p.clone())
        }
        fn rescale(&self, p: &mut DMatrix<f64>, factor: f64) {
            *p *= factor;
        }
        fn minimize_surrogate(&mut self, p: &DMatrix<f64>, ctx: &MmContext<'_, f64>) -> Result<DMatrix<f64>> {
            if ctx.iteration == 3 {
                return Err(EstimationError::numerical("boom"));
            }
            Ok(ctx.weighted_scatter()?.clone() + p * 0.0)
        }
        fn flatten(&self, _: &DMatrix<f64>) -> Vec<f64> {
            Vec::new()
        }
    }

    #[test]
    fn identity_callback_stops_after_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_real_samples(3, 10, &mut rng);
        let res = mm_drive(&mut Frozen, random_real_pd(3, &mut rng), &x, &MmSettings::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.termination, Termination::Converged);
        assert_eq!(res.objective_trace[0], res.objective_trace[1]);
    }

    #[test]
    fn callback_errors_carry_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_real_samples(3, 10, &mut rng);
        let err = mm_drive(&mut Failing, DMatrix::identity(3, 3), &x, &MmSettings::default()).unwrap_err();
        match err {
            EstimationError::AtIteration { iteration, source } => {
                assert_eq!(iteration, 3);
                assert!(matches!(*source, EstimationError::NumericalFailure(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unconstrained_callback_reproduces_tyler_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_real_samples(4, 25, &mut rng);
        let s = MmSettings::default();
        let driven = mm_drive(&mut Unconstrained, DMatrix::<f64>::identity(4, 4), &x, &s).unwrap();
        let direct = tyler_unconstrained(&x, &s).unwrap();
        assert_eq!(driven.objective_trace, direct.objective_trace);
        assert_eq!(driven.scatter, direct.scatter);
        assert!(fixed_point_residual(&driven.scatter, &x).unwrap() <= 1e-6);
    }

    #[test]
    fn descent_on_random_seeds() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random_complex_samples(4, 12, &mut rng);
            let init = random_complex_pd(4, &mut rng);
            let res = mm_drive(&mut Unconstrained, init, &x, &MmSettings::default()).unwrap();
            assert!(res.is_descent(1e-10), "seed {seed}: {}", res.max_objective_increase());
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_real_samples(2, 5, &mut rng);
        let s = MmSettings {
            tol: 0.0,
            ..MmSettings::default()
        };
        assert!(mm_drive(&mut Unconstrained, DMatrix::<f64>::identity(2, 2), &x, &s).is_err());
    }
}
