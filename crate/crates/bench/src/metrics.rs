//! Error metrics for scatter estimates.

use nalgebra::DMatrix;
use robust_scatter::error::EstimationError;
use robust_scatter::numerics::{hermitian_eig, normalize_trace, Scalar};
use robust_scatter::spiked::TIE_TOL;
use robust_scatter::tyler::SampleSet;

type Result<T> = std::result::Result<T, EstimationError>;

/// Sample covariance `(1/N) Σ x_i x_i^H`.
pub fn scm<T: Scalar>(x: &SampleSet<T>) -> DMatrix<T> {
    let c = x.columns();
    c * c.adjoint() * T::from_real(1.0 / x.len() as f64)
}

/// `‖R̂ − R0‖²_F / ‖R0‖²_F` after trace-normalizing both.
pub fn squared_error<T: Scalar>(estimate: &DMatrix<T>, r0: &DMatrix<T>) -> Result<f64> {
    if estimate.shape() != r0.shape() {
        return Err(EstimationError::invalid(format!(
            "estimate is {:?} but truth is {:?}",
            estimate.shape(),
            r0.shape()
        )));
    }
    let a = normalize_trace(estimate)?;
    let b = normalize_trace(r0)?;
    Ok((a - &b).norm_squared() / b.norm_squared())
}

/// Mean normalized squared error over a list of estimates.
pub fn nmse<T: Scalar>(estimates: &[DMatrix<T>], r0: &DMatrix<T>) -> Result<f64> {
    if estimates.is_empty() {
        return Err(EstimationError::invalid("nmse needs at least one estimate"));
    }
    let mut total = 0.0;
    for e in estimates {
        total += squared_error(e, r0)?;
    }
    Ok(total / estimates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceError {
    pub value: f64,
    /// `λ_L` and `λ_{L+1}` tie in one of the two matrices, so the noise
    /// subspace is not uniquely defined.
    pub degenerate: bool,
}

/// Noise-subspace projector built from the trailing `K − L` eigenvectors.
fn noise_projector<T: Scalar>(r: &DMatrix<T>, l: usize) -> Result<(DMatrix<T>, bool)> {
    let eig = hermitian_eig(r)?;
    let lam = &eig.eigenvalues;
    let tied = (lam[l - 1] - lam[l]).abs() <= TIE_TOL * lam[0].abs().max(f64::MIN_POSITIVE);
    Ok((eig.projector(l..r.nrows()), tied))
}

/// `‖Ê_c Ê_c^H − E_c E_c^H‖_F` for the noise subspaces of `r_hat` and `r0`.
pub fn subspace_error<T: Scalar>(r_hat: &DMatrix<T>, r0: &DMatrix<T>, l: usize) -> Result<SubspaceError> {
    let k = r0.nrows();
    if r_hat.shape() != r0.shape() {
        return Err(EstimationError::invalid("subspace_error needs matrices of equal size"));
    }
    if l == 0 || l >= k {
        return Err(EstimationError::invalid(format!("signal dimension must satisfy 1 <= L < K, got {l}")));
    }
    let (p_hat, t1) = noise_projector(r_hat, l)?;
    let (p0, t2) = noise_projector(r0, l)?;
    Ok(SubspaceError {
        value: (p_hat - p0).norm(),
        degenerate: t1 || t2,
    })
}

/// Mean and standard error of the mean. A single value has zero error.
pub fn mean_stderr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn nmse_trivial_cases() {
        let r0 = diag(&[3.0, 2.0, 1.0]);
        assert_eq!(nmse(&[r0.clone()], &r0).unwrap(), 0.0);
        assert!(nmse(&[r0.clone() * 7.5], &r0).unwrap() < 1e-30);
        assert!(nmse::<f64>(&[], &r0).unwrap_err().is_input_error());
    }

    #[test]
    fn nmse_hand_computed() {
        // normalized: R0 = diag(1/2, 1/2), E = diag(3/4, 1/4)
        // error = 2 * (1/4)^2 = 1/8, ‖R0‖² = 1/2  -> 1/4
        let r0 = diag(&[1.0, 1.0]);
        let e = diag(&[3.0, 1.0]);
        assert!((nmse(&[e.clone()], &r0).unwrap() - 0.25).abs() < 1e-15);
        // averaged with a perfect estimate
        assert!((nmse(&[e, r0.clone()], &r0).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn subspace_error_cases() {
        let r0 = diag(&[3.0, 1.0, 1.0]);
        assert_eq!(subspace_error(&r0, &r0, 1).unwrap().value, 0.0);
        // signal along e2 instead of e1: projectors diag(0,1,1) and diag(1,0,1)
        let swapped = diag(&[1.0, 3.0, 1.0]);
        let err = subspace_error(&swapped, &r0, 1).unwrap();
        assert!((err.value - 2f64.sqrt()).abs() < 1e-14);
        assert!(!err.degenerate);
        // rotating inside the signal block leaves the projector unchanged
        let r2 = diag(&[5.0, 4.0, 1.0, 1.0]);
        let (c, s) = (0.6, 0.8);
        let mut q = DMatrix::<f64>::identity(4, 4);
        q[(0, 0)] = c;
        q[(0, 1)] = -s;
        q[(1, 0)] = s;
        q[(1, 1)] = c;
        let rotated = &q * &r2 * q.transpose();
        assert!(subspace_error(&rotated, &r2, 2).unwrap().value < 1e-14);
        assert!(subspace_error(&diag(&[1.0, 1.0, 1.0]), &r0, 1).unwrap().degenerate);
        assert!(subspace_error(&r0, &r0, 3).is_err());
    }

    #[test]
    fn scm_of_known_samples() {
        let x = SampleSet::from_columns(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(scm(&x), diag(&[0.5, 2.0]));
        let z = SampleSet::from_columns(DMatrix::from_element(1, 1, Complex64::new(0.0, 2.0))).unwrap();
        assert_eq!(scm(&z)[(0, 0)], Complex64::new(4.0, 0.0));
    }

    #[test]
    fn mean_stderr_values() {
        assert_eq!(mean_stderr(&[]), None);
        assert_eq!(mean_stderr(&[2.0]), Some((2.0, 0.0)));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    fn pd(entries: Vec<f64>, k: usize) -> DMatrix<f64> {
        let g = DMatrix::from_vec(k, k, entries);
        &g * g.transpose() + DMatrix::identity(k, k) * 0.1
    }

    proptest! {
        #[test]
        fn nmse_is_scale_invariant(a in prop::collection::vec(-1.0f64..1.0, 16),
                                   b in prop::collection::vec(-1.0f64..1.0, 16),
                                   c1 in 0.01f64..100.0, c2 in 0.01f64..100.0) {
            let (ra, rb) = (pd(a, 4), pd(b, 4));
            let base = nmse(&[ra.clone()], &rb).unwrap();
            let scaled = nmse(&[ra * c1], &(rb * c2)).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * (1.0 + base));
        }

        #[test]
        fn subspace_error_is_bounded(a in prop::collection::vec(-1.0f64..1.0, 25),
                                     b in prop::collection::vec(-1.0f64..1.0, 25),
                                     l in 1usize..5) {
            let e = subspace_error(&pd(a, 5), &pd(b, 5), l).unwrap();
            prop_assert!(e.value >= 0.0);
            prop_assert!(e.value <= (2.0 * l.min(5 - l) as f64).sqrt() + 1e-12);
        }
    }
}
