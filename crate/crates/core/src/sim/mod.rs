//! Synthetic backscatter captures for body-worn tags read by a two-element
//! array under time-interleaved antenna switching.

mod capture;
mod gesture;

pub use capture::{
    pair_slot,
    iq_to_raw_streams, read_capture, slot_pair, synth_capture, write_capture, CaptureHeader,
    IQCapture, RawChannel, RawStreams, Read,
};
pub use gesture::{catalog, gesture_trajectory, Gesture, NUM_GESTURES};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Two-element uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayGeometry {
    /// Element spacing d/λ.
    pub element_spacing_wavelengths: f64,
    pub num_elements: usize,
    pub carrier_frequency_hz: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            element_spacing_wavelengths: 0.8,
            num_elements: 2,
            carrier_frequency_hz: 915.0e6,
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.element_spacing_wavelengths > 0.0) {
            return Err(Error::param("element spacing must be positive"));
        }
        if self.num_elements != 2 {
            return Err(Error::param(format!(
                "only two-element arrays are supported, got {}",
                self.num_elements
            )));
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(Error::param("carrier frequency must be positive"));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Half-width of the unambiguous azimuth range in degrees.
    ///
    /// The round trip doubles the inter-element phase, so the steering phase
    /// `4π·(d/λ)·sin θ` stays inside (−π, π] only while
    /// `|sin θ| < 1 / (4·d/λ)`.
    pub fn unambiguous_half_width_deg(&self) -> f64 {
        let s = 1.0 / (4.0 * self.element_spacing_wavelengths);
        if s >= 1.0 {
            90.0
        } else {
            s.asin().to_degrees()
        }
    }

    pub fn steering_vector(&self, theta_deg: f64) -> [Complex64; 2] {
        [
            steering_element(theta_deg, self.element_spacing_wavelengths, 1),
            steering_element(theta_deg, self.element_spacing_wavelengths, 2),
        ]
    }
}

/// Element `m` (1-based) of the round-trip steering vector,
/// `exp(j·4π·(d/λ)·(m−1)·sin θ)`.
pub fn steering_element(theta_deg: f64, d_over_lambda: f64, m: usize) -> Complex64 {
    debug_assert!(m >= 1, "antenna index is 1-based");
    let phase = 4.0 * PI * d_over_lambda * (m as f64 - 1.0) * theta_deg.to_radians().sin();
    Complex64::from_polar(1.0, phase)
}

/// A weak non-line-of-sight path from a static scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlosPath {
    /// Amplitude relative to the line-of-sight path; must be below 1.
    pub gain_ratio: f64,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Linear transmit power P.
    pub transmit_power: f64,
    /// Complex noise variance σ² (split evenly between I and Q).
    pub noise_variance: f64,
    pub nlos_paths: Vec<NlosPath>,
    /// Slot rate of the switched receive chain; one read per slot.
    pub reads_per_second: f64,
    /// Reads whose noiseless power falls below this floor are misdetected.
    pub misdetect_rss_floor_db: f64,
    /// Global calibration constant of the 1/r² round-trip gain.
    pub gain_constant: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            transmit_power: 1.0,
            noise_variance: 2.0e-3,
            nlos_paths: vec![NlosPath {
                gain_ratio: 0.2,
                azimuth_deg: -25.0,
            }],
            reads_per_second: 1280.0,
            misdetect_rss_floor_db: -11.0,
            gain_constant: 1.0,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.transmit_power > 0.0) {
            return Err(Error::param("transmit power must be positive"));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::param("noise variance must be non-negative"));
        }
        if !(self.reads_per_second > 0.0) {
            return Err(Error::param("read rate must be positive"));
        }
        if !(self.gain_constant > 0.0) {
            return Err(Error::param("gain constant must be positive"));
        }
        for p in &self.nlos_paths {
            if !(p.gain_ratio >= 0.0 && p.gain_ratio < 1.0) {
                return Err(Error::param(format!(
                    "NLoS gain ratio {} must lie in [0, 1)",
                    p.gain_ratio
                )));
            }
        }
        Ok(())
    }
}

/// One trajectory sample of a tag relative to the array center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time_s: f64,
    pub azimuth_deg: f64,
    pub range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagTrajectory {
    /// 1-based tag index.
    pub tag_id: usize,
    pub samples: Vec<TrajectoryPoint>,
}

impl TagTrajectory {
    pub fn validate(&self, half_fov_deg: f64) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::data(format!("trajectory of tag {} is empty", self.tag_id)));
        }
        for w in self.samples.windows(2) {
            if !(w[1].time_s > w[0].time_s) {
                return Err(Error::data("trajectory times must be strictly increasing"));
            }
        }
        for p in &self.samples {
            if !(p.azimuth_deg.abs() < half_fov_deg) {
                return Err(Error::data(format!(
                    "azimuth {:.3}° of tag {} outside the ±{:.3}° field of view",
                    p.azimuth_deg, self.tag_id, half_fov_deg
                )));
            }
            if !(p.range_m > 0.0) {
                return Err(Error::data("tag range must be positive"));
            }
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |p| p.time_s)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |p| p.time_s)
    }

    /// Linear interpolation of (azimuth, range) at `t`, clamped to the ends.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let s = &self.samples;
        if t <= s[0].time_s {
            return (s[0].azimuth_deg, s[0].range_m);
        }
        let last = s[s.len() - 1];
        if t >= last.time_s {
            return (last.azimuth_deg, last.range_m);
        }
        let hi = s.partition_point(|p| p.time_s <= t);
        let (a, b) = (s[hi - 1], s[hi]);
        let w = (t - a.time_s) / (b.time_s - a.time_s);
        (
            a.azimuth_deg + w * (b.azimuth_deg - a.azimuth_deg),
            a.range_m + w * (b.range_m - a.range_m),
        )
    }

    pub fn azimuths(&self) -> Vec<f64> {
        self.samples.iter().map(|p| p.azimuth_deg).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn steering_reference_element_is_one() {
        for theta in [-17.0, -3.0, 0.0, 12.5] {
            let a = steering_element(theta, 0.8, 1);
            assert_eq!(a, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn steering_examples() {
        let a = steering_element(0.0, 0.8, 2);
        assert_abs_diff_eq!(a.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-15);

        // sin(18.21°) ≈ 0.3125 puts the doubled phase at π.
        let a = steering_element(18.21, 0.8, 2);
        assert_abs_diff_eq!(a.re, -1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-3);

        let a = steering_element(30.0, 0.8, 2);
        let expect = Complex64::from_polar(1.0, 1.6 * PI);
        assert_abs_diff_eq!(a.re, expect.re, epsilon = 1e-12);
        assert_abs_diff_eq!(a.im, expect.im, epsilon = 1e-12);
    }

    #[test]
    fn unambiguous_width_for_default_spacing() {
        let g = ArrayGeometry::default();
        assert_abs_diff_eq!(g.unambiguous_half_width_deg(), 18.209_956, epsilon = 1e-5);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let mut c = SimConfig::default();
        c.nlos_paths[0].gain_ratio = 1.0;
        assert!(c.validate().is_err());
        let c = SimConfig {
            transmit_power: 0.0,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
        let g = ArrayGeometry {
            num_elements: 3,
            ..ArrayGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn trajectory_interpolation_clamps() {
        let t = TagTrajectory {
            tag_id: 1,
            samples: vec![
                TrajectoryPoint { time_s: 0.0, azimuth_deg: 0.0, range_m: 1.0 },
                TrajectoryPoint { time_s: 1.0, azimuth_deg: 10.0, range_m: 2.0 },
            ],
        };
        assert_eq!(t.at(-1.0), (0.0, 1.0));
        assert_eq!(t.at(0.5), (5.0, 1.5));
        assert_eq!(t.at(3.0), (10.0, 2.0));
    }
}
