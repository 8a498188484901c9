//! Half-wavelength uniform linear array and MUSIC.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use robust_scatter::error::EstimationError;
use robust_scatter::numerics::hermitian_eig;

type Result<T> = std::result::Result<T, EstimationError>;

/// Default MUSIC evaluation grid spacing in degrees.
pub const MUSIC_STEP_DEG: f64 = 0.5;

/// `a(θ) = [1, e^{−jπ sin θ}, …, e^{−jπ(K−1) sin θ}]^T`, θ in degrees.
pub fn steering_vector(k: usize, theta_deg: f64) -> DVector<Complex64> {
    let phase = -std::f64::consts::PI * theta_deg.to_radians().sin();
    DVector::from_fn(k, |m, _| Complex64::from_polar(1.0, phase * m as f64))
}

/// Angles `−90, −90 + step, …` up to `90` inclusive.
pub fn angle_grid(step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0 && step_deg <= 180.0) {
        return Err(EstimationError::invalid(format!("grid step must lie in (0, 180], got {step_deg}")));
    }
    let count = (180.0 / step_deg + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| -90.0 + i as f64 * step_deg).collect())
}

/// Steering vectors on `angle_grid(step_deg)`, one atom per column.
pub fn ula_dictionary(k: usize, step_deg: f64) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    if k == 0 {
        return Err(EstimationError::invalid("array needs at least one sensor"));
    }
    let grid = angle_grid(step_deg)?;
    let mut atoms = DMatrix::zeros(k, grid.len());
    for (j, &theta) in grid.iter().enumerate() {
        atoms.set_column(j, &steering_vector(k, theta));
    }
    Ok((grid, atoms))
}

/// Parses `ula:K:step_degrees`.
pub fn parse_ula_spec(spec: &str) -> Option<(usize, f64)> {
    let mut parts = spec.strip_prefix("ula:")?.split(':');
    let k = parts.next()?.trim().parse().ok()?;
    let step = parts.next()?.trim().parse().ok()?;
    parts.next().is_none().then_some((k, step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicSpectrum {
    pub grid: Vec<f64>,
    pub spectrum: Vec<f64>,
    /// Angles of the strongest local maxima, strongest first.
    pub peaks: Vec<f64>,
    /// Fewer than `L` local maxima were found.
    pub short_peak_list: bool,
}

/// `P(θ) = 1 / (a(θ)^H Ê_c Ê_c^H a(θ))` with `Ê_c` the trailing `K − L`
/// eigenvectors of `r_hat`. Peaks are strict local maxima of the grid
/// values; the two endpoints never count.
pub fn music_spectrum(r_hat: &DMatrix<Complex64>, l: usize, grid: &[f64]) -> Result<MusicSpectrum> {
    let k = r_hat.nrows();
    if l == 0 || l >= k {
        return Err(EstimationError::invalid(format!("source count must satisfy 1 <= L < K, got {l}")));
    }
    let eig = hermitian_eig(r_hat)?;
    let noise = eig.eigenvectors.columns(l, k - l).into_owned();
    let spectrum: Vec<f64> = grid
        .iter()
        .map(|&theta| {
            let proj = noise.adjoint() * steering_vector(k, theta);
            1.0 / proj.norm_squared().max(f64::MIN_POSITIVE)
        })
        .collect();

    let mut maxima: Vec<usize> = (1..grid.len().saturating_sub(1))
        .filter(|&i| spectrum[i] > spectrum[i - 1] && spectrum[i] > spectrum[i + 1])
        .collect();
    maxima.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    let short_peak_list = maxima.len() < l;
    maxima.truncate(l);
    Ok(MusicSpectrum {
        grid: grid.to_vec(),
        peaks: maxima.iter().map(|&i| grid[i]).collect(),
        spectrum,
        short_peak_list,
    })
}

/// True when the peaks can be matched one-to-one with the true angles with
/// every pair at most `tol_deg` apart.
pub fn angles_recovered(peaks: &[f64], truth: &[f64], tol_deg: f64) -> bool {
    if peaks.len() != truth.len() {
        return false;
    }
    // In one dimension the sorted pairing minimizes the largest gap.
    let mut p = peaks.to_vec();
    let mut t = truth.to_vec();
    p.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    p.iter().zip(&t).all(|(a, b)| (a - b).abs() <= tol_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::doa_covariance;

    #[test]
    fn steering_vector_phases() {
        let a = steering_vector(4, 30.0);
        // sin 30° = 1/2, so consecutive sensors differ by −π/2
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((a[2] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert!((steering_vector(3, 0.0) - DVector::from_element(3, Complex64::new(1.0, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn grids_and_specs() {
        let g = angle_grid(5.0).unwrap();
        assert_eq!(g.len(), 37);
        assert_eq!((g[0], g[36]), (-90.0, 90.0));
        assert_eq!(angle_grid(0.5).unwrap().len(), 361);
        assert!(angle_grid(0.0).is_err());
        assert_eq!(parse_ula_spec("ula:15:5"), Some((15, 5.0)));
        assert_eq!(parse_ula_spec("ula:15"), None);
        assert_eq!(parse_ula_spec("dict.csv"), None);
        let (grid, atoms) = ula_dictionary(15, 5.0).unwrap();
        assert_eq!(atoms.shape(), (15, grid.len()));
    }

    #[test]
    fn single_source_peak() {
        let r = doa_covariance(8, &[0.0], &[1.0], 0.1);
        let grid = angle_grid(MUSIC_STEP_DEG).unwrap();
        let m = music_spectrum(&r, 1, &grid).unwrap();
        assert_eq!(m.peaks, vec![0.0]);
        assert!(!m.short_peak_list);
    }

    #[test]
    fn exact_covariance_recovers_scenario() {
        let angles = [-10.0, 10.0, 15.0, 35.0, 40.0];
        let r = doa_covariance(15, &angles, &[1.0; 5], 0.1);
        let m = music_spectrum(&r, 5, &angle_grid(MUSIC_STEP_DEG).unwrap()).unwrap();
        let mut peaks = m.peaks.clone();
        peaks.sort_by(f64::total_cmp);
        assert_eq!(peaks, angles.to_vec());
        assert!(angles_recovered(&m.peaks, &angles, 0.0));
    }

    #[test]
    fn short_peak_list_is_flagged() {
        let r = doa_covariance(6, &[20.0], &[1.0], 0.1);
        let m = music_spectrum(&r, 3, &angle_grid(1.0).unwrap()).unwrap();
        assert!(m.peaks.len() <= 3);
        // K = 2 with noise eigenvector [1, 1]/√2: P(θ) = 1/(1 + cos(π sin θ))
        // grows monotonically towards both endpoints, so there is no interior peak.
        let h = Complex64::new(0.5, 0.0);
        let r = DMatrix::from_row_slice(2, 2, &[h * 3.0, -h, -h, h * 3.0]);
        let m = music_spectrum(&r, 1, &angle_grid(1.0).unwrap()).unwrap();
        assert!(m.short_peak_list);
        assert!(m.peaks.is_empty());
    }

    #[test]
    fn recovery_matching() {
        assert!(angles_recovered(&[40.5, -10.0], &[-10.0, 40.0], 0.5));
        assert!(!angles_recovered(&[40.5, -10.0], &[-10.0, 40.0], 0.4));
        assert!(!angles_recovered(&[10.0], &[10.0, 15.0], 5.0));
        // two peaks on one source leave the other unmatched
        assert!(!angles_recovered(&[10.0, 11.0], &[10.0, 30.0], 2.5));
    }
}
