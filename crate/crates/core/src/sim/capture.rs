use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ArrayGeometry, SimConfig, TagTrajectory};
use crate::error::{Error, Result};

const CAPTURE_MAGIC: &str = "# rfgest-capture v1";
const HEADER_PREFIX: &str = "# header ";
const COLUMNS: &str = "slot,antenna,tag,i,q,detected";

/// Maps a slot index to `(cycle k, antenna m, tag i)` by inverting
/// `slot = 4k + 2m + i − 6`. Everything is 1-based, so cycle 1 occupies
/// slots 1..=4.
pub fn slot_pair(slot: usize) -> (usize, usize, usize) {
    debug_assert!(slot >= 1, "slots are 1-based");
    let z = slot - 1;
    (z / 4 + 1, (z % 4) / 2 + 1, z % 2 + 1)
}

/// Inverse of [`slot_pair`].
pub fn pair_slot(k: usize, antenna: usize, tag: usize) -> usize {
    4 * k + 2 * antenna + tag - 6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Read {
    pub slot: usize,
    pub antenna: usize,
    pub tag: usize,
    pub iq: Complex64,
    /// False where the tag was misdetected; `iq` is zero then.
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureHeader {
    pub geometry: ArrayGeometry,
    pub config: SimConfig,
    pub num_tags: usize,
    pub num_slots: usize,
    pub start_time_s: f64,
    pub sample_id: Option<String>,
    /// 1-based gesture class for training data.
    pub label: Option<usize>,
}

impl CaptureHeader {
    pub fn slot_period_s(&self) -> f64 {
        1.0 / self.config.reads_per_second
    }

    pub fn slot_time(&self, slot: usize) -> f64 {
        self.start_time_s + (slot - 1) as f64 * self.slot_period_s()
    }

    /// Transmit phasor `x(n) = exp(j·2π·f_c·n·T_s)` at slot `n`.
    ///
    /// Only the fractional carrier cycles per slot matter, so the phase is
    /// reduced before scaling to keep it accurate for large `n`.
    pub fn carrier_phasor(&self, slot: usize) -> Complex64 {
        let cycles = self.geometry.carrier_frequency_hz * self.slot_period_s();
        let frac = (cycles.fract() * slot as f64).fract();
        Complex64::from_polar(1.0, 2.0 * PI * frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IQCapture {
    pub header: CaptureHeader,
    /// One entry per slot, ordered by slot; `reads[n - 1]` holds slot `n`.
    pub reads: Vec<Read>,
}

impl IQCapture {
    pub fn channel(&self, antenna: usize, tag: usize) -> impl Iterator<Item = &Read> + '_ {
        self.reads
            .iter()
            .filter(move |r| r.antenna == antenna && r.tag == tag)
    }

    /// Cycle count K (each cycle visits every antenna/tag pair once).
    pub fn num_cycles(&self) -> usize {
        self.header.num_slots / 4
    }

    /// Removes the known transmit phasor from every read.
    pub fn derotated(&self) -> IQCapture {
        let reads = self
            .reads
            .iter()
            .map(|r| Read {
                iq: r.iq * self.header.carrier_phasor(r.slot).conj(),
                ..*r
            })
            .collect();
        IQCapture {
            header: self.header.clone(),
            reads,
        }
    }

    pub fn gap_fraction(&self) -> f64 {
        if self.reads.is_empty() {
            return 0.0;
        }
        self.reads.iter().filter(|r| !r.detected).count() as f64 / self.reads.len() as f64
    }
}

/// Synthesizes the interleaved reads of one capture.
///
/// Each read is `g·√P·a_m(θ)·s_m(k) + Σ_ℓ g^ℓ·√P·a_m(θ^ℓ)·s_m(k) + ν`. The
/// line-of-sight gain is `G/r²·exp(−j·4πr/λ)` (round trip); each NLoS path
/// reaches the tag via a static scatterer, so its gain scales the LoS
/// amplitude by `gain_ratio` and its phase advances only one way,
/// `exp(−j·2πr/λ)`, producing range-dependent fading.
pub fn synth_capture(
    trajectories: &[TagTrajectory],
    geometry: &ArrayGeometry,
    config: &SimConfig,
) -> Result<IQCapture> {
    geometry.validate()?;
    config.validate()?;
    if trajectories.is_empty() || trajectories.len() > 2 {
        return Err(Error::data(format!(
            "expected one or two tag trajectories, got {}",
            trajectories.len()
        )));
    }
    let half_fov = geometry.unambiguous_half_width_deg();
    for t in trajectories {
        t.validate(half_fov)?;
    }
    let start = trajectories
        .iter()
        .map(TagTrajectory::start_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let end = trajectories
        .iter()
        .map(TagTrajectory::end_time)
        .fold(f64::INFINITY, f64::min);
    let cycles = ((end - start) * config.reads_per_second / 4.0).floor() as usize;
    if cycles == 0 {
        return Err(Error::data("trajectory too short for a single read cycle"));
    }
    let num_tags = trajectories.len();
    let header = CaptureHeader {
        geometry: *geometry,
        config: config.clone(),
        num_tags,
        num_slots: 4 * cycles,
        start_time_s: start,
        sample_id: None,
        label: None,
    };

    let lambda = geometry.wavelength_m();
    let sqrt_p = config.transmit_power.sqrt();
    let nlos_steering: Vec<(f64, [Complex64; 2])> = config
        .nlos_paths
        .iter()
        .map(|p| (p.gain_ratio, geometry.steering_vector(p.azimuth_deg)))
        .collect();
    let floor_power = 10f64.powf(config.misdetect_rss_floor_db / 10.0);
    let noise = Normal::new(0.0, (config.noise_variance / 2.0).sqrt())
        .map_err(|e| Error::param(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let mut reads = Vec::with_capacity(header.num_slots);
    for slot in 1..=header.num_slots {
        let (_, antenna, tag) = slot_pair(slot);
        // Noise is drawn for every slot so the stream stays aligned
        // regardless of which reads are dropped.
        let nu = Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
        let Some(traj) = trajectories.iter().find(|t| t.tag_id == tag) else {
            reads.push(Read { slot, antenna, tag, iq: Complex64::new(0.0, 0.0), detected: false });
            continue;
        };
        let (theta, range) = traj.at(header.slot_time(slot));
        let amp = config.gain_constant / (range * range);
        let los_gain = Complex64::from_polar(amp, -4.0 * PI * range / lambda);
        let a = geometry.steering_vector(theta)[antenna - 1];
        let mut clean = los_gain * a;
        for (ratio, steer) in &nlos_steering {
            let g = Complex64::from_polar(ratio * amp, -2.0 * PI * range / lambda);
            clean += g * steer[antenna - 1];
        }
        clean *= sqrt_p * header.carrier_phasor(slot);
        let detected = clean.norm_sqr() >= floor_power;
        let iq = if detected { clean + nu } else { Complex64::new(0.0, 0.0) };
        reads.push(Read { slot, antenna, tag, iq, detected });
    }
    Ok(IQCapture { header, reads })
}

/// Per-read RSS and phase for one antenna/tag channel; gaps carry NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChannel {
    pub antenna: usize,
    pub tag: usize,
    pub times_s: Vec<f64>,
    pub rss_db: Vec<f64>,
    pub phase_rad: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RawChannel {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawStreams {
    /// Ordered by (antenna, tag).
    pub channels: Vec<RawChannel>,
}

impl RawStreams {
    pub fn channel(&self, antenna: usize, tag: usize) -> Option<&RawChannel> {
        self.channels
            .iter()
            .find(|c| c.antenna == antenna && c.tag == tag)
    }
}

/// RSS = 10·log10|iq|² and phase = arg(iq) ∈ (−π, π] per channel.
pub fn iq_to_raw_streams(capture: &IQCapture) -> Result<RawStreams> {
    if capture.reads.is_empty() {
        return Err(Error::data("capture has no reads"));
    }
    let mut channels = Vec::new();
    for antenna in 1..=2 {
        for tag in 1..=capture.header.num_tags {
            let mut ch = RawChannel {
                antenna,
                tag,
                times_s: Vec::new(),
                rss_db: Vec::new(),
                phase_rad: Vec::new(),
                valid: Vec::new(),
            };
            for r in capture.channel(antenna, tag) {
                ch.times_s.push(capture.header.slot_time(r.slot));
                if r.detected {
                    ch.rss_db.push(10.0 * r.iq.norm_sqr().log10());
                    ch.phase_rad.push(wrap_phase(r.iq.arg()));
                } else {
                    ch.rss_db.push(f64::NAN);
                    ch.phase_rad.push(f64::NAN);
                }
                ch.valid.push(r.detected);
            }
            channels.push(ch);
        }
    }
    Ok(RawStreams { channels })
}

/// `atan2` returns [−π, π]; fold −π onto π.
fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Writes the capture as header comments followed by one CSV row per read.
pub fn write_capture(path: &Path, capture: &IQCapture) -> Result<()> {
    let mut out = String::with_capacity(48 * capture.reads.len() + 512);
    out.push_str(CAPTURE_MAGIC);
    out.push('\n');
    out.push_str(HEADER_PREFIX);
    out.push_str(&serde_json::to_string(&capture.header)?);
    out.push('\n');
    out.push_str(COLUMNS);
    out.push('\n');
    for r in &capture.reads {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.slot, r.antenna, r.tag, r.iq.re, r.iq.im, r.detected as u8
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_capture(path: &Path) -> Result<IQCapture> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CAPTURE_MAGIC) {
        return Err(Error::format(path, "missing capture magic line"));
    }
    let header_line = lines
        .next()
        .and_then(|l| l.strip_prefix(HEADER_PREFIX))
        .ok_or_else(|| Error::format(path, "missing header record"))?;
    let header: CaptureHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if lines.next() != Some(COLUMNS) {
        return Err(Error::format(path, "missing column line"));
    }
    let mut reads = Vec::with_capacity(header.num_slots);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(path, format!("row {}: {what}", lineno + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let parse_u = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let read = Read {
            slot: parse_u(f[0])?,
            antenna: parse_u(f[1])?,
            tag: parse_u(f[2])?,
            iq: Complex64::new(parse_f(f[3])?, parse_f(f[4])?),
            detected: match f[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("detected must be 0 or 1")),
            },
        };
        if read.slot != reads.len() + 1 {
            return Err(bad("slots must be consecutive starting at 1"));
        }
        let (_, m, i) = slot_pair(read.slot);
        if (m, i) != (read.antenna, read.tag) {
            return Err(bad("slot does not match antenna/tag interleave"));
        }
        reads.push(read);
    }
    if reads.len() != header.num_slots {
        return Err(Error::format(
            path,
            format!("header announces {} slots, found {}", header.num_slots, reads.len()),
        ));
    }
    Ok(IQCapture { header, reads })
}
