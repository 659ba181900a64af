use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{steering_element, ArrayGeometry};

/// Azimuth search interval in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
}

impl FieldOfView {
    pub fn new(theta_min_deg: f64, theta_max_deg: f64) -> Result<Self> {
        if !(theta_min_deg < theta_max_deg) {
            return Err(Error::param(format!(
                "empty field of view [{theta_min_deg}, {theta_max_deg}]"
            )));
        }
        Ok(Self { theta_min_deg, theta_max_deg })
    }

    /// Symmetric interval inside the unambiguous range, rounded inward to
    /// whole degrees (±18° for d/λ = 0.8).
    pub fn from_geometry(geometry: &ArrayGeometry) -> Self {
        let half = geometry.unambiguous_half_width_deg().floor();
        Self { theta_min_deg: -half, theta_max_deg: half }
    }

    pub fn check_unambiguous(&self, geometry: &ArrayGeometry) -> Result<()> {
        let half = geometry.unambiguous_half_width_deg();
        if self.theta_min_deg < -half || self.theta_max_deg > half {
            return Err(Error::param(format!(
                "field of view [{}, {}] exceeds the unambiguous range ±{half:.3}°",
                self.theta_min_deg, self.theta_max_deg
            )));
        }
        Ok(())
    }

    pub fn contains(&self, theta_deg: f64) -> bool {
        theta_deg >= self.theta_min_deg && theta_deg <= self.theta_max_deg
    }
}

/// Sample covariance `R̂ = (1/N)·Y·Yᴴ` of a 2×N snapshot matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: [[Complex64; 2]; 2],
    pub sample_count: usize,
}

impl CovarianceEstimate {
    /// Wraps a caller-built matrix after checking it is Hermitian (1e-12)
    /// and positive semidefinite (eigenvalues ≥ −1e-10).
    pub fn from_matrix(matrix: [[Complex64; 2]; 2], sample_count: usize) -> Result<Self> {
        let scale = matrix
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(1.0, f64::max);
        let herm = (matrix[0][1] - matrix[1][0].conj()).norm()
            + matrix[0][0].im.abs()
            + matrix[1][1].im.abs();
        if herm > 1e-12 * scale {
            return Err(Error::data("covariance matrix is not Hermitian"));
        }
        let cov = Self { matrix, sample_count };
        let (_, lambda_n) = cov.eigenvalues();
        if lambda_n < -1e-10 * scale {
            return Err(Error::data("covariance matrix is not positive semidefinite"));
        }
        Ok(cov)
    }

    /// (λ_large, λ_small).
    pub fn eigenvalues(&self) -> (f64, f64) {
        let (mean, _, rad) = self.eigen_terms();
        (mean + rad, mean - rad)
    }

    fn eigen_terms(&self) -> (f64, f64, f64) {
        let a = self.matrix[0][0].re;
        let c = self.matrix[1][1].re;
        let b = self.matrix[0][1];
        let half_diff = 0.5 * (a - c);
        (0.5 * (a + c), half_diff, half_diff.hypot(b.norm()))
    }
}

pub fn estimate_covariance(antenna1: &[Complex64], antenna2: &[Complex64]) -> Result<CovarianceEstimate> {
    if antenna1.len() != antenna2.len() {
        return Err(Error::DimensionMismatch {
            expected: antenna1.len(),
            actual: antenna2.len(),
        });
    }
    let n = antenna1.len();
    if n < 2 {
        return Err(Error::data(format!("covariance needs at least 2 paired reads, got {n}")));
    }
    let mut r11 = 0.0;
    let mut r22 = 0.0;
    let mut r12 = Complex64::new(0.0, 0.0);
    for (y1, y2) in antenna1.iter().zip(antenna2) {
        r11 += y1.norm_sqr();
        r22 += y2.norm_sqr();
        r12 += y1 * y2.conj();
    }
    let inv = 1.0 / n as f64;
    Ok(CovarianceEstimate {
        matrix: [
            [Complex64::new(r11 * inv, 0.0), r12 * inv],
            [(r12 * inv).conj(), Complex64::new(r22 * inv, 0.0)],
        ],
        sample_count: n,
    })
}

/// Signal/noise eigenpairs of a 2×2 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceSplit {
    pub signal_vector: [Complex64; 2],
    pub noise_vector: [Complex64; 2],
    /// (λ_s, λ_n) with λ_s ≥ λ_n.
    pub eigenvalues: (f64, f64),
    /// Eigenvalue gap below 1e-12: the split is arbitrary.
    pub degenerate: bool,
}

pub fn split_subspaces(cov: &CovarianceEstimate) -> SubspaceSplit {
    let (mean, half_diff, rad) = cov.eigen_terms();
    let b = cov.matrix[0][1];
    // Two algebraically equivalent eigenvector forms; pick the one without
    // cancellation. Both are exact null vectors of R̂ − λ_s·I.
    let v = if half_diff >= 0.0 {
        [Complex64::new(half_diff + rad, 0.0), b.conj()]
    } else {
        [b, Complex64::new(rad - half_diff, 0.0)]
    };
    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let signal = if norm > 0.0 {
        [v[0] / norm, v[1] / norm]
    } else {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    };
    // Orthogonal complement in C²; ⟨u_s, u_n⟩ vanishes identically.
    let noise = [-signal[1].conj(), signal[0].conj()];
    let gap = 2.0 * rad;
    SubspaceSplit {
        signal_vector: signal,
        noise_vector: noise,
        eigenvalues: (mean + rad, mean - rad),
        degenerate: gap < 1e-12,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicPeak {
    pub theta_deg: f64,
    /// (θ, P_MUSIC(θ)) on the search grid.
    pub spectrum: Vec<(f64, f64)>,
}

/// `aᴴ(θ)·u_n·u_nᴴ·a(θ)`, the MUSIC null spectrum.
fn null_power(noise: &[Complex64; 2], theta_deg: f64, d_over_lambda: f64) -> f64 {
    let a2 = steering_element(theta_deg, d_over_lambda, 2);
    // a1 = 1
    (noise[0] + a2.conj() * noise[1]).norm_sqr()
}

/// Grid line search of `P(θ) = 1/(aᴴ u_n u_nᴴ a)` over the field of view.
///
/// Ties resolve to the lower angle. An interior maximum is refined by a
/// parabola through the null spectrum at the peak and its two neighbours,
/// which is locally quadratic where `P` itself is not.
pub fn music_peak(
    split: &SubspaceSplit,
    fov: &FieldOfView,
    grid_step_deg: f64,
    d_over_lambda: f64,
) -> Result<MusicPeak> {
    if !(grid_step_deg > 0.0) {
        return Err(Error::param("grid step must be positive"));
    }
    if !(fov.theta_min_deg < fov.theta_max_deg) {
        return Err(Error::param("field of view is empty"));
    }
    let n = ((fov.theta_max_deg - fov.theta_min_deg) / grid_step_deg + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n)
        .map(|i| fov.theta_min_deg + i as f64 * grid_step_deg)
        .collect();
    let null: Vec<f64> = grid
        .iter()
        .map(|&t| null_power(&split.noise_vector, t, d_over_lambda))
        .collect();
    let spectrum: Vec<(f64, f64)> = grid
        .iter()
        .zip(&null)
        .map(|(&t, &d)| (t, 1.0 / d.max(f64::MIN_POSITIVE)))
        .collect();

    let mut best = 0;
    for (i, &(_, p)) in spectrum.iter().enumerate().skip(1) {
        if p > spectrum[best].1 {
            best = i;
        }
    }
    let mut theta = grid[best];
    if best > 0 && best + 1 < n {
        let (dm, d0, dp) = (null[best - 1], null[best], null[best + 1]);
        let curv = dm - 2.0 * d0 + dp;
        if curv > 0.0 {
            let offset = (0.5 * (dm - dp) / curv).clamp(-0.5, 0.5);
            theta += offset * grid_step_deg;
        }
    }
    Ok(MusicPeak { theta_deg: theta, spectrum })
}
