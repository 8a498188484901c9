//! Random instance generators shared by unit tests.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::numerics::{chol_pd, Scalar};
use crate::tyler::SampleSet;

pub fn random_real_samples(k: usize, n: usize, rng: &mut ChaCha8Rng) -> SampleSet<f64> {
    SampleSet::from_columns(DMatrix::from_fn(k, n, |_, _| rng.sample(StandardNormal))).unwrap()
}

pub fn random_complex_samples(k: usize, n: usize, rng: &mut ChaCha8Rng) -> SampleSet<Complex64> {
    SampleSet::from_columns(DMatrix::from_fn(k, n, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }))
    .unwrap()
}

pub fn random_real_pd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(k, k) * 0.2
}

pub fn random_complex_pd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(k, k, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    &g * g.adjoint() + DMatrix::identity(k, k) * Complex64::new(0.2, 0.0)
}

/// `x = √τ·L z` with `τ ~ χ²(1)` and `L L^T = R0`.
pub fn heavy_tailed_samples(r0: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> SampleSet<f64> {
    let k = r0.nrows();
    let l = chol_pd(r0).unwrap().into_lower();
    let chi = ChiSquared::new(1.0).unwrap();
    let mut data = DMatrix::zeros(k, n);
    for i in 0..n {
        let z = nalgebra::DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let tau: f64 = chi.sample(rng);
        data.set_column(i, &(&l * z * tau.sqrt()));
    }
    SampleSet::from_columns(data).unwrap()
}

pub fn nmse<T: Scalar>(est: &DMatrix<T>, truth: &DMatrix<T>) -> f64 {
    let a = crate::numerics::normalize_trace(est).unwrap();
    let b = crate::numerics::normalize_trace(truth).unwrap();
    (a - &b).norm_squared() / b.norm_squared()
}

pub fn ar_toeplitz(k: usize, beta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| beta.powi((i as i32 - j as i32).abs()))
}
