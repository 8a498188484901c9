//! Ground-truth scatter matrices and heavy-tailed elliptical samples.
//!
//! Every random draw is keyed by a `u64` seed. A sample set uses two
//! ChaCha8 streams of the same seed, one for the Gaussian part and one for
//! the texture `τ`, so two texture laws can be compared on identical
//! Gaussian draws.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use robust_scatter::numerics::{chol_pd, hermitian_part, kron, Scalar};
use robust_scatter::tyler::SampleSet;
use serde::{Deserialize, Serialize};

use crate::doa::steering_vector;
use crate::error::{BenchError, Result};

const GAUSSIAN_STREAM: u64 = 0;
const TEXTURE_STREAM: u64 = 1;
const TRUTH_STREAM: u64 = 2;

/// Law of the per-sample scale `τ` in `x = √τ·u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TextureLaw {
    ChiSquared(f64),
    /// `τ = 1`: plain Gaussian samples.
    Constant,
}

/// `(R(β))_{ij} = β^{|i−j|}`.
pub fn ar_toeplitz(k: usize, beta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| beta.powi(i.abs_diff(j) as i32))
}

/// `R(β)` with every diagonal beyond `bandwidth` set to zero.
pub fn banded_ar_toeplitz(k: usize, beta: f64, bandwidth: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        if i.abs_diff(j) <= bandwidth {
            beta.powi(i.abs_diff(j) as i32)
        } else {
            0.0
        }
    })
}

/// SplitMix64 finalizer, used to derive independent per-trial seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of Monte Carlo trial `trial` at sample size `n`.
pub fn trial_seed(seed: u64, n: usize, trial: usize) -> u64 {
    mix(mix(mix(seed) ^ n as u64) ^ trial as u64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn standard_normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let g: f64 = rng.sample(StandardNormal);
    match T::imag_unit() {
        None => T::from_real(g),
        Some(i) => {
            let h: f64 = rng.sample(StandardNormal);
            T::from_real(g * std::f64::consts::FRAC_1_SQRT_2) + i * T::from_real(h * std::f64::consts::FRAC_1_SQRT_2)
        }
    }
}

/// `N` draws of `√τ · L z` with `L L^H = R0`, `z` standard (circular)
/// normal and `τ ~ χ²(dof)`.
pub fn sample_elliptical<T: Scalar>(r0: &DMatrix<T>, n: usize, seed: u64, dof: f64) -> Result<SampleSet<T>> {
    sample_elliptical_with(r0, n, seed, TextureLaw::ChiSquared(dof))
}

pub fn sample_elliptical_with<T: Scalar>(
    r0: &DMatrix<T>,
    n: usize,
    seed: u64,
    law: TextureLaw,
) -> Result<SampleSet<T>> {
    let k = r0.nrows();
    let lower = chol_pd(r0)
        .ok_or_else(|| BenchError::invalid("true scatter matrix is not positive definite"))?
        .into_lower();
    let chi = match law {
        TextureLaw::ChiSquared(dof) => {
            Some(ChiSquared::new(dof).map_err(|e| BenchError::invalid(format!("texture degrees of freedom: {e}")))?)
        }
        TextureLaw::Constant => None,
    };
    let mut gauss = stream(seed, GAUSSIAN_STREAM);
    let mut texture = stream(seed, TEXTURE_STREAM);
    let z = DMatrix::<T>::from_fn(k, n, |_, _| standard_normal(&mut gauss));
    let mut data = &lower * z;
    for mut col in data.column_iter_mut() {
        let tau = chi.map_or(1.0, |c| c.sample(&mut texture));
        col *= T::from_real(tau.sqrt());
    }
    Ok(SampleSet::from_columns(data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorSpec {
    Identity { dim: usize },
    ArToeplitz { dim: usize, beta: f64 },
}

impl FactorSpec {
    pub fn dim(&self) -> usize {
        match self {
            FactorSpec::Identity { dim } | FactorSpec::ArToeplitz { dim, .. } => *dim,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match *self {
            FactorSpec::Identity { dim } => DMatrix::identity(dim, dim),
            FactorSpec::ArToeplitz { dim, beta } => ar_toeplitz(dim, beta),
        }
    }
}

/// Ground truth of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    ArToeplitz {
        beta: f64,
    },
    BandedArToeplitz {
        beta: f64,
        bandwidth: usize,
    },
    /// Far-field sources on a half-wavelength ULA. A single power is
    /// shared by all sources.
    Doa {
        angles_deg: Vec<f64>,
        powers: Vec<f64>,
        noise_var: f64,
    },
    /// Random orthonormal directions and powers drawn uniformly from
    /// `power_range` on every trial.
    Spiked {
        spikes: usize,
        noise_var: f64,
        power_range: [f64; 2],
    },
    /// `A0 ⊗ B0` with `A0` of size `p` and `B0` of size `q`.
    Kronecker {
        a: FactorSpec,
        b: FactorSpec,
    },
}

/// A generated ground truth, real or complex.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl Truth {
    pub fn dim(&self) -> usize {
        match self {
            Truth::Real(m) => m.nrows(),
            Truth::Complex(m) => m.nrows(),
        }
    }
}

impl TruthSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        let fail = |msg: String| Err(BenchError::invalid(msg));
        match self {
            TruthSpec::ArToeplitz { beta } | TruthSpec::BandedArToeplitz { beta, .. } if !(beta.abs() < 1.0) => {
                fail(format!("AR coefficient must satisfy |beta| < 1, got {beta}"))
            }
            TruthSpec::BandedArToeplitz { bandwidth, .. } if *bandwidth >= k => {
                fail(format!("bandwidth {bandwidth} must be below K = {k}"))
            }
            TruthSpec::Doa { angles_deg, powers, noise_var } => {
                if angles_deg.is_empty() || angles_deg.len() >= k {
                    return fail(format!("need 1 <= sources < K, got {} sources for K = {k}", angles_deg.len()));
                }
                if powers.len() != 1 && powers.len() != angles_deg.len() {
                    return fail(format!("{} powers given for {} sources", powers.len(), angles_deg.len()));
                }
                if powers.iter().any(|&p| !(p > 0.0)) || !(*noise_var > 0.0) {
                    return fail("source powers and noise variance must be positive".into());
                }
                Ok(())
            }
            TruthSpec::Spiked { spikes, noise_var, power_range } => {
                if *spikes == 0 || *spikes >= k {
                    return fail(format!("need 1 <= spikes < K, got {spikes} for K = {k}"));
                }
                if !(*noise_var > 0.0) || !(power_range[0] >= 0.0) || !(power_range[1] >= power_range[0]) {
                    return fail("spiked truth needs noise_var > 0 and 0 <= lo <= hi".into());
                }
                Ok(())
            }
            TruthSpec::Kronecker { a, b } => {
                if a.dim() * b.dim() != k {
                    return fail(format!("factor sizes {} x {} do not match K = {k}", a.dim(), b.dim()));
                }
                for f in [a, b] {
                    if let FactorSpec::ArToeplitz { beta, .. } = f {
                        if !(beta.abs() < 1.0) {
                            return fail(format!("AR coefficient must satisfy |beta| < 1, got {beta}"));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Dimension of the signal subspace, when the truth has one.
    pub fn signal_dim(&self) -> Option<usize> {
        match self {
            TruthSpec::Doa { angles_deg, .. } => Some(angles_deg.len()),
            TruthSpec::Spiked { spikes, .. } => Some(*spikes),
            _ => None,
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, TruthSpec::Doa { .. })
    }

    /// Draws the truth for one trial; deterministic kinds ignore `seed`.
    pub fn generate(&self, k: usize, seed: u64) -> Result<Truth> {
        self.validate(k)?;
        let truth = match self {
            TruthSpec::ArToeplitz { beta } => Truth::Real(ar_toeplitz(k, *beta)),
            TruthSpec::BandedArToeplitz { beta, bandwidth } => Truth::Real(banded_ar_toeplitz(k, *beta, *bandwidth)),
            TruthSpec::Doa { angles_deg, powers, noise_var } => {
                let powers: Vec<f64> = if powers.len() == 1 {
                    vec![powers[0]; angles_deg.len()]
                } else {
                    powers.clone()
                };
                Truth::Complex(doa_covariance(k, angles_deg, &powers, *noise_var))
            }
            TruthSpec::Spiked { spikes, noise_var, power_range } => {
                let mut rng = stream(seed, TRUTH_STREAM);
                let g = DMatrix::<f64>::from_fn(k, *spikes, |_, _| rng.sample(StandardNormal));
                let q = g.qr().q();
                let mut r = DMatrix::identity(k, k) * *noise_var;
                for j in 0..*spikes {
                    let p = if power_range[1] > power_range[0] {
                        rng.random_range(power_range[0]..power_range[1])
                    } else {
                        power_range[0]
                    };
                    let col = q.column(j);
                    r += col * col.transpose() * p;
                }
                Truth::Real(hermitian_part(&r))
            }
            TruthSpec::Kronecker { a, b } => Truth::Real(kron(&a.matrix(), &b.matrix())),
        };
        let pd = match &truth {
            Truth::Real(m) => chol_pd(m).is_some(),
            Truth::Complex(m) => chol_pd(m).is_some(),
        };
        if !pd {
            return Err(BenchError::invalid("generated truth is not positive definite"));
        }
        Ok(truth)
    }
}

/// `Σ p_j a(θ_j) a(θ_j)^H + σ² I`.
pub fn doa_covariance(k: usize, angles_deg: &[f64], powers: &[f64], noise_var: f64) -> DMatrix<Complex64> {
    let mut r = DMatrix::<Complex64>::identity(k, k) * Complex64::new(noise_var, 0.0);
    for (&theta, &p) in angles_deg.iter().zip(powers) {
        let a: DVector<Complex64> = steering_vector(k, theta);
        r += &a * a.adjoint() * Complex64::new(p, 0.0);
    }
    hermitian_part(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use robust_scatter::numerics::normalize_trace;

    #[test]
    fn same_seed_same_samples() {
        let r0 = ar_toeplitz(4, 0.5);
        let a = sample_elliptical(&r0, 30, 7, 1.0).unwrap();
        let b = sample_elliptical(&r0, 30, 7, 1.0).unwrap();
        assert_eq!(a.columns(), b.columns());
        let c = sample_elliptical(&r0, 30, 8, 1.0).unwrap();
        assert_ne!(a.columns(), c.columns());
    }

    #[test]
    fn normalized_second_moment_of_isotropic_draws() {
        let x = sample_elliptical(&DMatrix::<f64>::identity(3, 3), 100_000, 11, 1.0).unwrap();
        let mut s = DMatrix::<f64>::zeros(3, 3);
        for col in x.columns().column_iter() {
            s += col * col.transpose() / col.norm_squared();
        }
        let s = normalize_trace(&s).unwrap();
        assert!((s - DMatrix::identity(3, 3) / 3.0).norm() <= 0.02);
    }

    #[test]
    fn complex_draws_are_circular() {
        let r0 = DMatrix::<Complex64>::identity(2, 2);
        let x = sample_elliptical_with(&r0, 50_000, 3, TextureLaw::Constant).unwrap();
        let n = x.len() as f64;
        let c = x.columns();
        let second = (c * c.adjoint()) / Complex64::new(n, 0.0);
        let pseudo = (c * c.transpose()) / Complex64::new(n, 0.0);
        assert!((second - &r0).norm() < 0.03);
        assert!(pseudo.norm() < 0.03);
    }

    #[test]
    fn texture_gives_heavier_tails_on_matched_seeds() {
        let r0 = ar_toeplitz(5, 0.3);
        let ratio = |x: &SampleSet<f64>| {
            let mut norms: Vec<f64> = x.columns().column_iter().map(|c| c.norm()).collect();
            norms.sort_by(f64::total_cmp);
            norms[norms.len() - 1] / norms[norms.len() / 2]
        };
        for seed in 0..5 {
            let heavy = sample_elliptical(&r0, 500, seed, 1.0).unwrap();
            let gauss = sample_elliptical_with(&r0, 500, seed, TextureLaw::Constant).unwrap();
            assert!(ratio(&heavy) > ratio(&gauss));
        }
    }

    #[test]
    fn normalized_samples_do_not_depend_on_texture() {
        let r0 = ar_toeplitz(4, 0.6);
        let moment = |x: &SampleSet<f64>| {
            let mut s = DMatrix::<f64>::zeros(4, 4);
            for col in x.columns().column_iter() {
                s += col * col.transpose() / col.norm_squared();
            }
            s / x.len() as f64
        };
        let a = sample_elliptical(&r0, 400, 21, 1.0).unwrap();
        let b = sample_elliptical(&r0, 400, 21, 5.0).unwrap();
        let c = sample_elliptical_with(&r0, 400, 21, TextureLaw::Constant).unwrap();
        assert!((moment(&a) - moment(&b)).norm() <= 1e-12);
        assert!((moment(&a) - moment(&c)).norm() <= 1e-12);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for n in [20, 40, 60] {
            for t in 0..200 {
                assert!(seen.insert(trial_seed(1, n, t)));
            }
        }
        assert_ne!(trial_seed(1, 20, 0), trial_seed(2, 20, 0));
    }

    #[test]
    fn truths_have_expected_shape() {
        let t = TruthSpec::BandedArToeplitz { beta: 0.4, bandwidth: 3 }.generate(15, 0).unwrap();
        let Truth::Real(m) = t else { panic!() };
        assert_eq!(m[(0, 3)], 0.4f64.powi(3));
        assert_eq!(m[(0, 4)], 0.0);

        let spec = TruthSpec::Spiked { spikes: 3, noise_var: 0.01, power_range: [0.01, 1.0] };
        let Truth::Real(m) = spec.generate(10, 5).unwrap() else { panic!() };
        let ev = robust_scatter::numerics::hermitian_eig(&m).unwrap().eigenvalues;
        for j in 3..10 {
            assert!((ev[j] - 0.01).abs() < 1e-12);
        }
        assert!(ev[2] > 0.01 + 0.01 - 1e-12 && ev[0] < 1.01 + 1e-12);
        assert_eq!(spec.generate(10, 5).unwrap(), spec.generate(10, 5).unwrap());
        assert_ne!(spec.generate(10, 5).unwrap(), spec.generate(10, 6).unwrap());

        let kr = TruthSpec::Kronecker {
            a: FactorSpec::Identity { dim: 2 },
            b: FactorSpec::ArToeplitz { dim: 3, beta: 0.8 },
        };
        let Truth::Real(m) = kr.generate(6, 0).unwrap() else { panic!() };
        assert_eq!(m[(3, 4)], 0.8);
        assert_eq!(m[(0, 3)], 0.0);
        assert!(kr.generate(5, 0).is_err());
    }

    #[test]
    fn doa_truth_is_hermitian_with_unit_diagonal_plus_noise() {
        let spec = TruthSpec::Doa { angles_deg: vec![-10.0, 20.0], powers: vec![1.0], noise_var: 0.1 };
        let Truth::Complex(m) = spec.generate(6, 0).unwrap() else { panic!() };
        for i in 0..6 {
            assert!((m[(i, i)].re - 2.1).abs() < 1e-12);
        }
        assert!((m.adjoint() - &m).norm() < 1e-14);
        assert!(TruthSpec::Doa { angles_deg: vec![0.0; 6], powers: vec![1.0], noise_var: 0.1 }.validate(6).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let spec: TruthSpec = serde_json::from_str(r#"{"kind":"ar_toeplitz","beta":0.8}"#).unwrap();
        assert_eq!(spec, TruthSpec::ArToeplitz { beta: 0.8 });
        let kr: TruthSpec = serde_json::from_str(
            r#"{"kind":"kronecker","a":{"kind":"identity","dim":10},"b":{"kind":"ar_toeplitz","dim":8,"beta":0.8}}"#,
        )
        .unwrap();
        assert!(kr.validate(80).is_ok());
    }
}
