//! Dense Hermitian linear algebra over real or complex scalars.
//!
//! Every estimator in this crate is written once against the [`Scalar`]
//! trait, which is implemented for `f64` (real samples, `x^T`) and
//! [`Complex64`] (complex samples, `x^H`).

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{EstimationError, Result};

/// Scalar field tag carried by samples, dictionaries and results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Real,
    Complex,
}

/// Scalar type an estimation runs over.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    const FIELD: Field;

    fn to_c64(self) -> Complex64;

    /// Converts back from a complex value. For `f64` the imaginary part is dropped.
    fn from_c64(value: Complex64) -> Self;

    /// `i` when the field has one.
    fn imag_unit() -> Option<Self>;

    fn re(self) -> f64 {
        self.real()
    }
}

impl Scalar for f64 {
    const FIELD: Field = Field::Real;

    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }

    fn from_c64(value: Complex64) -> Self {
        value.re
    }

    fn imag_unit() -> Option<Self> {
        None
    }
}

impl Scalar for Complex64 {
    const FIELD: Field = Field::Complex;

    fn to_c64(self) -> Complex64 {
        self
    }

    fn from_c64(value: Complex64) -> Self {
        value
    }

    fn imag_unit() -> Option<Self> {
        Some(Complex64::new(0.0, 1.0))
    }
}

pub fn to_complex_matrix<T: Scalar>(m: &DMatrix<T>) -> DMatrix<Complex64> {
    m.map(|v| v.to_c64())
}

pub fn from_complex_matrix<T: Scalar>(m: &DMatrix<Complex64>) -> DMatrix<T> {
    m.map(T::from_c64)
}

/// `(M + M^H) / 2`.
pub fn hermitian_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::from_real(0.5);
    (m + m.adjoint()) * half
}

/// Relative Frobenius distance of `m` from its conjugate transpose.
pub fn hermitian_defect<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).norm() / scale
}

pub fn trace_re<T: Scalar>(m: &DMatrix<T>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].real()).sum()
}

/// Rescales `m` to unit trace.
pub fn normalize_trace<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let tr = trace_re(m);
    if !(tr.is_finite() && tr > 0.0) {
        return Err(EstimationError::numerical(format!(
            "cannot trace-normalize a matrix with trace {tr}"
        )));
    }
    Ok(m * T::from_real(1.0 / tr))
}

/// `||a - b||_F / ||b||_F`.
pub fn relative_change<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        return a.norm();
    }
    (a - b).norm() / denom
}

/// `Re Tr(A B)` without forming the product.
pub fn trace_product_re<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).real();
        }
    }
    acc
}

fn ensure_square_finite<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(EstimationError::invalid(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(EstimationError::invalid(format!("{what}: empty matrix")));
    }
    if m.iter().any(|v| !(v.real().is_finite() && v.imaginary().is_finite())) {
        return Err(EstimationError::invalid(format!("{what}: non-finite entries")));
    }
    Ok(())
}

/// Spectral decomposition `U diag(λ) U^H` with eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T: Scalar> {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Scalar> EigenDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U f(Λ) U^H`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<T> {
        let mut scaled = self.eigenvectors.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let s = T::from_real(f(lambda));
            for v in scaled.column_mut(j).iter_mut() {
                *v *= s;
            }
        }
        hermitian_part(&(scaled * self.eigenvectors.adjoint()))
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.map_spectrum(|l| l)
    }

    /// Orthogonal projector onto the span of eigenvectors `range`.
    pub fn projector(&self, range: std::ops::Range<usize>) -> DMatrix<T> {
        let cols = self.eigenvectors.columns(range.start, range.len());
        &cols * cols.adjoint()
    }
}

/// Hermitian eigendecomposition (Householder tridiagonalization followed by
/// implicit symmetric QR), sorted so that `λ_1 ≥ … ≥ λ_K`.
pub fn hermitian_eig<T: Scalar>(m: &DMatrix<T>) -> Result<EigenDecomposition<T>> {
    ensure_square_finite(m, "hermitian_eig")?;
    let n = m.nrows();
    let sym = hermitian_part(m);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000 * n.max(1)).ok_or_else(|| {
        EstimationError::numerical("symmetric eigensolver did not converge")
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::<T>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct PdFactor<T: Scalar> {
    lower: DMatrix<T>,
}

impl<T: Scalar> PdFactor<T> {
    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    pub fn into_lower(self) -> DMatrix<T> {
        self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.lower[(i, i)].real().ln()).sum::<f64>()
    }

    /// `L^{-1} B`.
    pub fn solve_lower(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        let n = self.dim();
        for c in 0..out.ncols() {
            for i in 0..n {
                let mut acc = out[(i, c)];
                for k in 0..i {
                    acc -= self.lower[(i, k)] * out[(k, c)];
                }
                out[(i, c)] = acc / self.lower[(i, i)];
            }
        }
        out
    }

    /// `L^{-H} B`.
    fn solve_upper(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        let n = self.dim();
        for c in 0..out.ncols() {
            for i in (0..n).rev() {
                let mut acc = out[(i, c)];
                for k in i + 1..n {
                    acc -= self.lower[(k, i)].conjugate() * out[(k, c)];
                }
                out[(i, c)] = acc / self.lower[(i, i)];
            }
        }
        out
    }

    /// `M^{-1} B`.
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn inverse(&self) -> DMatrix<T> {
        hermitian_part(&self.solve(&DMatrix::identity(self.dim(), self.dim())))
    }

    /// `x_i^H M^{-1} x_i` for every column `x_i` of `x`.
    pub fn quadratic_forms(&self, x: &DMatrix<T>) -> Vec<f64> {
        let y = self.solve_lower(x);
        y.column_iter().map(|c| c.norm_squared()).collect()
    }
}

/// Cholesky factorization used as a positive-definiteness test.
///
/// Returns `None` when the matrix is not numerically positive definite; the
/// strictly lower triangle and the real part of the diagonal are read.
pub fn chol_pd<T: Scalar>(m: &DMatrix<T>) -> Option<PdFactor<T>> {
    if !m.is_square() || m.nrows() == 0 {
        return None;
    }
    let n = m.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)].real();
        for k in 0..j {
            d -= l[(j, k)].modulus_squared();
        }
        if !(d.is_finite() && d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = T::from_real(ljj);
        for i in j + 1..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conjugate();
            }
            let v = acc * T::from_real(1.0 / ljj);
            if !(v.real().is_finite() && v.imaginary().is_finite()) {
                return None;
            }
            l[(i, j)] = v;
        }
    }
    Some(PdFactor { lower: l })
}

/// Cholesky factor or `NotPositiveDefinite` as an input error.
pub fn require_pd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<PdFactor<T>> {
    ensure_square_finite(m, what)?;
    chol_pd(m).ok_or_else(|| EstimationError::invalid(format!("{what}: matrix is not positive definite")))
}

/// Principal square root of a Hermitian positive definite matrix.
pub fn pd_sqrt<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = pd_eig(m, "pd_sqrt")?;
    Ok(eig.map_spectrum(f64::sqrt))
}

/// Inverse principal square root of a Hermitian positive definite matrix.
pub fn pd_inv_sqrt<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = pd_eig(m, "pd_inv_sqrt")?;
    Ok(eig.map_spectrum(|l| 1.0 / l.sqrt()))
}

fn pd_eig<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<EigenDecomposition<T>> {
    let eig = hermitian_eig(m)?;
    let min = eig.eigenvalues[eig.dim() - 1];
    if !(min > 0.0) {
        return Err(EstimationError::invalid(format!(
            "{what}: matrix is not positive definite (min eigenvalue {min:e})"
        )));
    }
    Ok(eig)
}

/// Normalized DFT matrix, entry `(m, n) = exp(-2πi·mn/L) / √L`.
pub fn dft_matrix(l: usize) -> DMatrix<Complex64> {
    assert!(l >= 1, "dft_matrix: size must be positive");
    let scale = 1.0 / (l as f64).sqrt();
    DMatrix::from_fn(l, l, |m, n| {
        // reduce mn mod L first so large products keep full phase accuracy
        let k = (m * n) % l;
        let phase = -2.0 * std::f64::consts::PI * k as f64 / l as f64;
        Complex64::from_polar(scale, phase)
    })
}

/// `A ⊗ B`.
pub fn kron<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}
