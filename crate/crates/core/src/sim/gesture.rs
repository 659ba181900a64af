//! Parametric stand-ins for the 21-gesture vocabulary.
//!
//! Tag 1 sits on the right hand, tag 2 on the left. Both tags are always
//! present in the field; for one-handed gestures the idle hand rests with
//! small seeded drift. Left-hand motions are mirror images (azimuth negated)
//! of the right-hand template.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TagTrajectory, TrajectoryPoint};
use crate::error::{Error, Result};

pub const NUM_GESTURES: usize = 21;

/// Trajectory sample rate in Hz. Capture synthesis interpolates between points.
const TRAJECTORY_RATE_HZ: f64 = 200.0;
const REST_AZIMUTH_DEG: f64 = 7.0;
const REST_RANGE_M: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gesture {
    /// 1-based class id.
    pub id: usize,
    pub code: &'static str,
    pub name: &'static str,
    pub two_handed: bool,
}

const CATALOG: [Gesture; NUM_GESTURES] = [
    Gesture { id: 1, code: "LD", name: "Lateral Down", two_handed: false },
    Gesture { id: 2, code: "LF", name: "Lateral to Front", two_handed: false },
    Gesture { id: 3, code: "LR", name: "Lateral Raise", two_handed: false },
    Gesture { id: 4, code: "LAC", name: "Left Arm Circle", two_handed: false },
    Gesture { id: 5, code: "RAC", name: "Right Arm Circle", two_handed: false },
    Gesture { id: 6, code: "L", name: "Lift", two_handed: false },
    Gesture { id: 7, code: "Pl", name: "Pull", two_handed: false },
    Gesture { id: 8, code: "Ps", name: "Push", two_handed: false },
    Gesture { id: 9, code: "LRo", name: "Left Round", two_handed: false },
    Gesture { id: 10, code: "RR", name: "Right Round", two_handed: false },
    Gesture { id: 11, code: "SL", name: "Swipe Left", two_handed: false },
    Gesture { id: 12, code: "SR", name: "Swipe Right", two_handed: false },
    Gesture { id: 13, code: "2HLD", name: "Two Hands Lateral Down", two_handed: true },
    Gesture { id: 14, code: "2HLF", name: "Two Hands Lateral to Front", two_handed: true },
    Gesture { id: 15, code: "2HLR", name: "Two Hands Lateral Raise", two_handed: true },
    Gesture { id: 16, code: "2HIC", name: "Two Hands Inward Circle", two_handed: true },
    Gesture { id: 17, code: "2HOC", name: "Two Hands Outward Circle", two_handed: true },
    Gesture { id: 18, code: "2HL", name: "Two Hands Lift", two_handed: true },
    Gesture { id: 19, code: "2HPl", name: "Two Hands Pull", two_handed: true },
    Gesture { id: 20, code: "2HPs", name: "Two Hands Push", two_handed: true },
    Gesture { id: 21, code: "2HR", name: "Two Hands Round", two_handed: true },
];

pub fn catalog() -> &'static [Gesture] {
    &CATALOG
}

/// Normalized time profile `u ∈ [0, 1] → shape(u)`.
#[derive(Debug, Clone, Copy)]
enum Profile {
    Linear,
    /// Smooth 0 → 1 with zero end slopes.
    Ease,
    /// 0 → 1 → 0.
    Bump,
    /// Full sine period.
    Wave,
    /// (1 − cos 2πu)/2 scaled to a full loop, paired with `Wave` for circles.
    Loop,
    /// (1 − cos πu)/2, half loop.
    HalfLoop,
}

impl Profile {
    fn eval(self, u: f64) -> f64 {
        match self {
            Profile::Linear => u,
            Profile::Ease => 0.5 - 0.5 * (PI * u).cos(),
            Profile::Bump => (PI * u).sin(),
            Profile::Wave => (2.0 * PI * u).sin(),
            Profile::Loop => 0.5 - 0.5 * (2.0 * PI * u).cos(),
            Profile::HalfLoop => 0.5 - 0.5 * (PI * u).cos(),
        }
    }
}

/// Right-hand motion template: `base + amp·profile(u)` per axis.
#[derive(Debug, Clone, Copy)]
struct Motion {
    az_base: f64,
    az_amp: f64,
    az: Profile,
    range_base: f64,
    range_amp: f64,
    range: Profile,
}

impl Motion {
    const fn new(
        az_base: f64,
        az_amp: f64,
        az: Profile,
        range_base: f64,
        range_amp: f64,
        range: Profile,
    ) -> Self {
        Self { az_base, az_amp, az, range_base, range_amp, range }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hands {
    Right,
    Left,
    Both,
}

fn template(class_id: usize) -> (Motion, Hands) {
    use Profile::*;
    let lateral_down = Motion::new(13.0, -8.0, Ease, 1.45, 0.15, Bump);
    let lateral_front = Motion::new(13.0, -7.0, Ease, 1.5, -0.35, Ease);
    let lateral_raise = Motion::new(5.0, 8.0, Ease, 1.45, -0.15, Bump);
    let circle = Motion::new(REST_AZIMUTH_DEG, 5.0, Wave, 1.55, -0.35, Loop);
    let circle_rev = Motion::new(REST_AZIMUTH_DEG, -5.0, Wave, 1.55, -0.35, Loop);
    let lift = Motion::new(REST_AZIMUTH_DEG, 3.0, Bump, 1.5, -0.3, Bump);
    let pull = Motion::new(REST_AZIMUTH_DEG, -2.0, Bump, 1.15, 0.6, Ease);
    let push = Motion::new(REST_AZIMUTH_DEG, 2.0, Bump, 1.75, -0.6, Ease);
    let round = Motion::new(3.0, 7.0, Bump, 1.5, -0.3, HalfLoop);
    let swipe_left = Motion::new(12.0, -20.0, Linear, 1.4, 0.1, Bump);
    let swipe_right = Motion::new(-8.0, 20.0, Linear, 1.4, 0.1, Bump);
    match class_id {
        1 => (lateral_down, Hands::Right),
        2 => (lateral_front, Hands::Right),
        3 => (lateral_raise, Hands::Right),
        4 => (circle, Hands::Left),
        5 => (circle, Hands::Right),
        6 => (lift, Hands::Right),
        7 => (pull, Hands::Right),
        8 => (push, Hands::Right),
        9 => (round, Hands::Left),
        10 => (round, Hands::Right),
        11 => (swipe_left, Hands::Right),
        12 => (swipe_right, Hands::Right),
        13 => (lateral_down, Hands::Both),
        14 => (lateral_front, Hands::Both),
        15 => (lateral_raise, Hands::Both),
        16 => (circle, Hands::Both),
        17 => (circle_rev, Hands::Both),
        18 => (lift, Hands::Both),
        19 => (pull, Hands::Both),
        20 => (push, Hands::Both),
        21 => (round, Hands::Both),
        _ => unreachable!("class id validated by caller"),
    }
}

/// Per-sample, per-hand variation drawn from the seed.
struct Variation {
    az_scale: f64,
    range_scale: f64,
    az_offset: f64,
    range_offset: f64,
    warp: f64,
    jitter_az: f64,
    jitter_range: f64,
    jitter_freq: f64,
    jitter_phase: f64,
}

impl Variation {
    fn draw(rng: &mut ChaCha8Rng, idle: bool) -> Self {
        Self {
            az_scale: rng.random_range(0.85..1.15),
            range_scale: rng.random_range(0.85..1.15),
            az_offset: rng.random_range(-1.0..1.0),
            range_offset: rng.random_range(-0.08..0.08),
            warp: rng.random_range(-0.3..0.3),
            jitter_az: if idle { 0.4 } else { 0.3 },
            jitter_range: 0.01,
            jitter_freq: rng.random_range(0.5..1.5),
            jitter_phase: rng.random_range(0.0..2.0 * PI),
        }
    }
}

fn hand_trajectory(
    tag_id: usize,
    motion: &Motion,
    mirror: bool,
    idle: bool,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> TagTrajectory {
    let v = Variation::draw(rng, idle);
    let n = (duration_s * TRAJECTORY_RATE_HZ).round().max(2.0) as usize + 1;
    let sign = if mirror { -1.0 } else { 1.0 };
    let samples = (0..n)
        .map(|s| {
            let t = duration_s * s as f64 / (n - 1) as f64;
            let u = t / duration_s;
            // Monotone time warp: derivative 1 + warp·(1 − 2u) > 0 for |warp| < 1.
            let uw = u + v.warp * u * (1.0 - u);
            let jitter = (2.0 * PI * v.jitter_freq * t + v.jitter_phase).sin();
            let (az, range) = if idle {
                (REST_AZIMUTH_DEG, REST_RANGE_M)
            } else {
                (
                    motion.az_base + v.az_scale * motion.az_amp * motion.az.eval(uw),
                    motion.range_base + v.range_scale * motion.range_amp * motion.range.eval(uw),
                )
            };
            TrajectoryPoint {
                time_s: t,
                azimuth_deg: sign * (az + v.az_offset + v.jitter_az * jitter),
                range_m: range + v.range_offset + v.jitter_range * jitter,
            }
        })
        .collect();
    TagTrajectory { tag_id, samples }
}

/// Trajectories of both tags for gesture `class_id` (1-based).
///
/// Index 0 is tag 1 (right hand), index 1 is tag 2 (left hand). The same
/// `(class_id, duration_s, seed)` always yields identical trajectories.
pub fn gesture_trajectory(class_id: usize, duration_s: f64, seed: u64) -> Result<Vec<TagTrajectory>> {
    if !(1..=NUM_GESTURES).contains(&class_id) {
        return Err(Error::param(format!(
            "unknown gesture class {class_id}, expected 1..={NUM_GESTURES}"
        )));
    }
    if !(duration_s > 0.0) {
        return Err(Error::param("gesture duration must be positive"));
    }
    let (motion, hands) = template(class_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let right_idle = hands == Hands::Left;
    let left_idle = hands == Hands::Right;
    let right = hand_trajectory(1, &motion, false, right_idle, duration_s, &mut rng);
    let left = hand_trajectory(2, &motion, true, left_idle, duration_s, &mut rng);
    Ok(vec![right, left])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn catalog_ids_are_dense() {
        for (i, g) in catalog().iter().enumerate() {
            assert_eq!(g.id, i + 1);
            assert_eq!(g.two_handed, g.id >= 13);
        }
    }

    #[test]
    fn swipe_left_is_monotone_decreasing() {
        for seed in 0..20 {
            let t = gesture_trajectory(11, 2.0, seed).unwrap();
            let az = t[0].azimuths();
            assert!(az.windows(2).all(|w| w[1] < w[0]), "seed {seed}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gesture_trajectory(16, 2.0, 7).unwrap();
        let b = gesture_trajectory(16, 2.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_vary_but_shape_is_kept() {
        for class in [1, 3, 5, 11, 12, 21] {
            let a = gesture_trajectory(class, 2.0, 1).unwrap();
            let b = gesture_trajectory(class, 2.0, 2).unwrap();
            assert_ne!(a[0].azimuths(), b[0].azimuths());
            let moving = if class == 4 || class == 9 { 1 } else { 0 };
            let r = pearson(&a[moving].azimuths(), &b[moving].azimuths());
            assert!(r > 0.9, "class {class}: r = {r}");
        }
    }

    #[test]
    fn all_classes_stay_in_field_of_view() {
        let half = crate::sim::ArrayGeometry::default().unambiguous_half_width_deg();
        for class in 1..=NUM_GESTURES {
            for seed in 0..30 {
                for t in gesture_trajectory(class, 2.0, seed).unwrap() {
                    t.validate(half - 1.0).unwrap();
                }
            }
        }
    }

    #[test]
    fn unknown_class_rejected() {
        assert!(gesture_trajectory(0, 2.0, 0).is_err());
        assert!(gesture_trajectory(22, 2.0, 0).is_err());
    }
}
