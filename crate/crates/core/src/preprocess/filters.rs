//! One-dimensional filters for RSS, phase and AoA channels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Min-max normalization onto exactly [0, 1]. Constant input is an error.
pub fn minmax_normalize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::data("min-max normalization needs at least 2 samples"));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::data("min-max normalization of non-finite data"));
    }
    if hi == lo {
        return Err(Error::data("constant signal cannot be min-max normalized"));
    }
    let span = hi - lo;
    Ok(x.iter().map(|&v| (v - lo) / span).collect())
}

/// Adds multiples of 2π so successive differences fall in (−π, π].
pub fn unwrap_phase(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut offset = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if i > 0 {
            let d = v - x[i - 1];
            // Largest k with d − 2πk still above −π, then step back if needed.
            let k = ((d + PI) / (2.0 * PI)).floor();
            let mut corrected = d - 2.0 * PI * k;
            let mut k = k;
            if corrected <= -PI {
                corrected += 2.0 * PI;
                k -= 1.0;
            }
            debug_assert!(corrected > -PI && corrected <= PI + 1e-12);
            offset -= 2.0 * PI * k;
        }
        out.push(v + offset);
    }
    out
}

/// Coefficients that evaluate the least-squares polynomial of degree
/// `order`, fitted to `window` samples centred on 0, at offset `at`.
fn savgol_coefficients(window: usize, order: usize, at: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let design = DMatrix::from_fn(window, order + 1, |i, j| (i as f64 - half).powi(j as i32));
    let gram = design.transpose() * &design;
    let basis = DVector::from_fn(order + 1, |j, _| at.powi(j as i32));
    let solved = gram
        .lu()
        .solve(&basis)
        .expect("Vandermonde gram matrix of distinct nodes is non-singular");
    (design * solved).iter().copied().collect()
}

/// Savitzky–Golay smoothing.
///
/// Interior points use the centred window. The first and last `window/2`
/// points evaluate the polynomial fitted to the first/last full window at
/// their own offset, so polynomials of degree ≤ `polyorder` pass through
/// unchanged everywhere, edges included.
pub fn savgol_filter(x: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) {
        return Err(Error::param(format!("Savitzky-Golay window {window} must be odd")));
    }
    if polyorder >= window {
        return Err(Error::param(format!(
            "polynomial order {polyorder} must be below window {window}"
        )));
    }
    if window > x.len() {
        return Err(Error::param(format!(
            "window {window} exceeds signal length {}",
            x.len()
        )));
    }
    let n = x.len();
    let half = window / 2;
    let centre = savgol_coefficients(window, polyorder, 0.0);
    let dot = |c: &[f64], start: usize| c.iter().zip(&x[start..start + window]).map(|(a, b)| a * b).sum::<f64>();
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = dot(&centre, i - half);
    }
    for i in 0..half {
        let c = savgol_coefficients(window, polyorder, i as f64 - half as f64);
        out[i] = dot(&c, 0);
        let j = n - 1 - i;
        let c = savgol_coefficients(window, polyorder, half as f64 - i as f64);
        out[j] = dot(&c, n - window);
    }
    Ok(out)
}

/// Normalized Gaussian kernel truncated at 4σ.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("Gaussian sigma {sigma} must be positive")));
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    Ok(k)
}

/// Half-sample symmetric extension (`… c b a | a b c … | … c b a`), periodic
/// with period 2n.
fn mirror_index(i: i64, n: usize) -> usize {
    let p = 2 * n as i64;
    let m = i.rem_euclid(p);
    if m < n as i64 {
        m as usize
    } else {
        (p - 1 - m) as usize
    }
}

/// Discrete Gaussian smoothing with mirrored edges.
///
/// The mirrored signal is even and 2n-periodic and the kernel is symmetric,
/// so the output sum equals the input sum.
pub fn gaussian_filter(x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let kernel = gaussian_kernel(sigma)?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let radius = (kernel.len() / 2) as i64;
    let n = x.len();
    Ok((0..n as i64)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[mirror_index(i + k as i64 - radius, n)])
                .sum()
        })
        .collect())
}

/// Linear interpolation of the valid samples onto `n` uniform points over
/// `[t_start, t_end]`. Targets outside the valid span take the nearest
/// valid value.
pub fn resample_at(
    times: &[f64],
    values: &[f64],
    valid: &[bool],
    t_start: f64,
    t_end: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if times.len() != values.len() || times.len() != valid.len() {
        return Err(Error::data("resample inputs have unequal lengths"));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|((&t, &v), _)| (t, v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::data(format!(
            "resampling needs at least 2 valid samples, got {}",
            pts.len()
        )));
    }
    if n < 2 {
        return Err(Error::param("resample target length must be ≥ 2"));
    }
    let step = (t_end - t_start) / (n - 1) as f64;
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    Ok((0..n)
        .map(|i| {
            let tau = if i == n - 1 { t_end } else { t_start + i as f64 * step };
            if tau <= first.0 {
                return first.1;
            }
            if tau >= last.0 {
                return last.1;
            }
            let hi = pts.partition_point(|p| p.0 <= tau);
            let (a, b) = (pts[hi - 1], pts[hi]);
            if tau == a.0 {
                return a.1;
            }
            a.1 + (b.1 - a.1) * (tau - a.0) / (b.0 - a.0)
        })
        .collect())
}

pub const FRAME_LENGTH: usize = 35;

/// Resamples index-spaced samples (with optional gaps) to 35 points
/// spanning the original index range.
pub fn resample_35(x: &[f64], valid: Option<&[bool]>) -> Result<Vec<f64>> {
    let all = vec![true; x.len()];
    let valid = valid.unwrap_or(&all);
    let times: Vec<f64> = (0..x.len()).map(|i| i as f64).collect();
    let end = x.len().saturating_sub(1) as f64;
    resample_at(&times, x, valid, 0.0, end, FRAME_LENGTH)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[1.0, 3.0, 5.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(minmax_normalize(&[5.0, 5.0, 5.0]).is_err());
        assert!(minmax_normalize(&[5.0]).is_err());
    }

    proptest! {
        #[test]
        fn minmax_spans_unit_interval(x in prop::collection::vec(-1e6f64..1e6, 2..80)) {
            prop_assume!(x.iter().any(|&v| v != x[0]));
            let y = minmax_normalize(&x).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 1.0);
        }

        #[test]
        fn unwrap_inverts_wrap(start in -10.0f64..10.0, slope in -3.0f64..3.0, n in 2usize..200) {
            let ramp: Vec<f64> = (0..n).map(|i| start + slope * i as f64).collect();
            let wrapped: Vec<f64> = ramp
                .iter()
                .map(|v| { let w = (v + PI).rem_euclid(2.0 * PI) - PI; if w == -PI { PI } else { w } })
                .collect();
            let back = unwrap_phase(&wrapped);
            let shift = back[0] - ramp[0];
            prop_assert!((shift / (2.0 * PI)).fract().abs() < 1e-9 || (shift / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
            for (b, r) in back.iter().zip(&ramp) {
                prop_assert!((b - r - shift).abs() < 1e-9);
            }
        }

        #[test]
        fn gaussian_preserves_mass(x in prop::collection::vec(-100.0f64..100.0, 1..60), sigma in 0.3f64..6.0) {
            let y = gaussian_filter(&x, sigma).unwrap();
            let mx = x.iter().sum::<f64>() / x.len() as f64;
            let my = y.iter().sum::<f64>() / y.len() as f64;
            prop_assert!((mx - my).abs() < 1e-9);
        }
    }

    #[test]
    fn unwrap_examples() {
        assert_eq!(unwrap_phase(&[0.0, 3.0]), vec![0.0, 3.0]);
        let u = unwrap_phase(&[3.0, -3.0]);
        assert_eq!(u[0], 3.0);
        assert_abs_diff_eq!(u[1], 3.283_185_307, epsilon = 1e-9);
        assert!(unwrap_phase(&[]).is_empty());
    }

    #[test]
    fn savgol_reproduces_cubics() {
        let x: Vec<f64> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.1;
                0.5 - 2.0 * t + 0.75 * t * t - 0.3 * t * t * t
            })
            .collect();
        let y = savgol_filter(&x, 11, 3).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn savgol_constant_and_errors() {
        let x = vec![2.5; 20];
        for v in savgol_filter(&x, 11, 3).unwrap() {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-12);
        }
        assert!(savgol_filter(&x, 10, 3).is_err());
        assert!(savgol_filter(&x, 5, 5).is_err());
        assert!(savgol_filter(&x[..7], 11, 3).is_err());
    }

    #[test]
    fn savgol_reduces_noise() {
        let noise = Normal::new(0.0, 0.2).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean: Vec<f64> = (0..200).map(|i| (i as f64 * 0.05).sin()).collect();
            let noisy: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
            let smooth = savgol_filter(&noisy, 11, 3).unwrap();
            let err = |y: &[f64]| y.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            assert!(err(&smooth) < err(&noisy));
        }
    }

    #[test]
    fn gaussian_kernel_properties() {
        let k = gaussian_kernel(2.0).unwrap();
        assert_eq!(k.len(), 17);
        assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_filter(&[1.0], -1.0).is_err());
    }

    #[test]
    fn gaussian_constant_and_impulse() {
        for v in gaussian_filter(&[3.7; 30], 2.0).unwrap() {
            assert!((v - 3.7).abs() < 1e-12);
        }
        let mut x = vec![0.0; 41];
        x[20] = 1.0;
        let y = gaussian_filter(&x, 2.0).unwrap();
        let k = gaussian_kernel(2.0).unwrap();
        for (i, w) in k.iter().enumerate() {
            assert_abs_diff_eq!(y[12 + i], *w, epsilon = 1e-15);
        }
    }

    #[test]
    fn resample_examples() {
        let x: Vec<f64> = (0..35).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(resample_35(&x, None).unwrap(), x);

        let ramp: Vec<f64> = (0..70).map(|i| 2.0 + 0.5 * i as f64).collect();
        let r = resample_35(&ramp, None).unwrap();
        assert_eq!(r.len(), 35);
        assert_eq!(r[0], 2.0);
        assert_eq!(r[34], 2.0 + 0.5 * 69.0);
        for w in r.windows(3) {
            assert_abs_diff_eq!(w[2] - w[1], w[1] - w[0], epsilon = 1e-12);
        }

        let x = [f64::NAN, 1.0, 4.0, 2.0, f64::NAN];
        let valid = [false, true, true, true, false];
        let r = resample_35(&x, Some(&valid)).unwrap();
        assert_eq!(r[0], 1.0);
        assert_eq!(r[34], 2.0);
        assert!(resample_35(&[1.0, 2.0], Some(&[true, false])).is_err());
    }
}
