use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{estimate_covariance, music_peak, split_subspaces, FieldOfView};
use crate::error::{Error, Result};
use crate::sim::{IQCapture, Read};

/// Azimuth time series for one tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoATrack {
    pub times_s: Vec<f64>,
    /// NaN where `valid_mask` is false.
    pub azimuth_deg: Vec<f64>,
    pub valid_mask: Vec<bool>,
    pub smoothed: bool,
}

impl AoATrack {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    pub(crate) fn check_lengths(&self) -> Result<()> {
        let n = self.times_s.len();
        if self.azimuth_deg.len() != n || self.valid_mask.len() != n {
            return Err(Error::data("track fields have unequal lengths"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AoaConfig {
    /// Window length in read cycles (one paired read per cycle at most).
    pub window: usize,
    pub hop: usize,
    /// Windows with fewer paired reads are marked invalid.
    pub min_pairs: usize,
    pub grid_step_deg: f64,
    /// Search interval; `None` derives it from the array geometry.
    pub fov: Option<FieldOfView>,
}

impl Default for AoaConfig {
    fn default() -> Self {
        Self {
            window: 64,
            hop: 32,
            min_pairs: 16,
            grid_step_deg: 0.05,
            fov: None,
        }
    }
}

/// Antenna-1/antenna-2 reads of one tag taken close together in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedRead {
    pub cycle: usize,
    pub time_s: f64,
    pub y: [Complex64; 2],
}

/// Nearest-slot pairing of a tag's two antenna streams after removing the
/// transmit phasor.
///
/// Each detected antenna-1 read pairs with the antenna-2 read of the same
/// cycle (2 slots later). If that one was missed, the antenna-2 read of the
/// previous cycle (2 slots earlier, equally near) is used unless it is
/// already paired. Unpaired reads are dropped.
pub fn pair_reads(capture: &IQCapture, tag: usize) -> Vec<PairedRead> {
    let h = &capture.header;
    let reads = &capture.reads;
    let derot = |r: &Read| r.iq * h.carrier_phasor(r.slot).conj();
    let cycles = capture.num_cycles();
    let mut used = vec![false; cycles + 1];
    let mut out = Vec::with_capacity(cycles);
    for k in 1..=cycles {
        let s1 = crate::sim::pair_slot(k, 1, tag);
        let r1 = &reads[s1 - 1];
        if !r1.detected {
            continue;
        }
        let same = &reads[crate::sim::pair_slot(k, 2, tag) - 1];
        let partner = if same.detected {
            Some((k, same))
        } else if k > 1 && !used[k - 1] {
            let prev = &reads[crate::sim::pair_slot(k - 1, 2, tag) - 1];
            prev.detected.then_some((k - 1, prev))
        } else {
            None
        };
        if let Some((k2, r2)) = partner {
            used[k2] = true;
            out.push(PairedRead {
                cycle: k,
                time_s: 0.5 * (h.slot_time(r1.slot) + h.slot_time(r2.slot)),
                y: [derot(r1), derot(r2)],
            });
        }
    }
    out
}

/// Per-window estimate, kept for spectrum dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub time_s: f64,
    pub pairs: usize,
    pub theta_deg: Option<f64>,
    pub spectrum: Vec<(f64, f64)>,
}

/// Raw MUSIC track of one tag over sliding windows of read cycles.
pub fn estimate_track(capture: &IQCapture, tag: usize, config: &AoaConfig) -> Result<(AoATrack, Vec<WindowEstimate>)> {
    if config.window < 2 || config.hop == 0 {
        return Err(Error::param("window must be ≥ 2 cycles and hop ≥ 1"));
    }
    if tag == 0 || tag > capture.header.num_tags {
        return Err(Error::param(format!("capture has no tag {tag}")));
    }
    let geometry = &capture.header.geometry;
    let fov = config.fov.unwrap_or_else(|| FieldOfView::from_geometry(geometry));
    fov.check_unambiguous(geometry)?;
    let pairs = pair_reads(capture, tag);
    let cycles = capture.num_cycles();
    if cycles < config.window {
        return Err(Error::data(format!(
            "capture has {cycles} cycles, shorter than one {}-cycle window",
            config.window
        )));
    }
    let h = &capture.header;
    let mut track = AoATrack {
        times_s: Vec::new(),
        azimuth_deg: Vec::new(),
        valid_mask: Vec::new(),
        smoothed: false,
    };
    let mut windows = Vec::new();
    let mut start = 1;
    while start + config.window - 1 <= cycles {
        let end = start + config.window - 1;
        let t0 = h.slot_time(crate::sim::pair_slot(start, 1, 1));
        let t1 = h.slot_time(crate::sim::pair_slot(end, 2, 2));
        let time = 0.5 * (t0 + t1);
        let lo = pairs.partition_point(|p| p.cycle < start);
        let hi = pairs.partition_point(|p| p.cycle <= end);
        let win = &pairs[lo..hi];
        let mut est = WindowEstimate { time_s: time, pairs: win.len(), theta_deg: None, spectrum: Vec::new() };
        if win.len() >= config.min_pairs.max(2) {
            let y1: Vec<_> = win.iter().map(|p| p.y[0]).collect();
            let y2: Vec<_> = win.iter().map(|p| p.y[1]).collect();
            let split = split_subspaces(&estimate_covariance(&y1, &y2)?);
            if !split.degenerate {
                let peak = music_peak(&split, &fov, config.grid_step_deg, geometry.element_spacing_wavelengths)?;
                est.theta_deg = Some(peak.theta_deg);
                est.spectrum = peak.spectrum;
            }
        }
        track.times_s.push(time);
        track.azimuth_deg.push(est.theta_deg.unwrap_or(f64::NAN));
        track.valid_mask.push(est.theta_deg.is_some());
        windows.push(est);
        start += config.hop;
    }
    Ok((track, windows))
}

const TRACK_COLUMNS: &str = "t,theta_deg,valid";

/// One CSV row per window; invalid windows leave `theta_deg` empty.
pub fn write_track(path: &Path, track: &AoATrack) -> Result<()> {
    track.check_lengths()?;
    let mut out = String::new();
    let _ = writeln!(out, "# rfgest-aoa v1 smoothed={}", track.smoothed);
    out.push_str(TRACK_COLUMNS);
    out.push('\n');
    for j in 0..track.len() {
        if track.valid_mask[j] {
            let _ = writeln!(out, "{},{},1", track.times_s[j], track.azimuth_deg[j]);
        } else {
            let _ = writeln!(out, "{},,0", track.times_s[j]);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_track(path: &Path) -> Result<AoATrack> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let smoothed = match lines.next() {
        Some("# rfgest-aoa v1 smoothed=true") => true,
        Some("# rfgest-aoa v1 smoothed=false") => false,
        _ => return Err(Error::format(path, "missing track header")),
    };
    if lines.next() != Some(TRACK_COLUMNS) {
        return Err(Error::format(path, "missing column line"));
    }
    let mut track = AoATrack { times_s: Vec::new(), azimuth_deg: Vec::new(), valid_mask: Vec::new(), smoothed };
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("bad row `{line}`"));
        if f.len() != 3 {
            return Err(bad());
        }
        track.times_s.push(f[0].parse().map_err(|_| bad())?);
        match f[2] {
            "1" => {
                track.azimuth_deg.push(f[1].parse().map_err(|_| bad())?);
                track.valid_mask.push(true);
            }
            "0" => {
                track.azimuth_deg.push(f64::NAN);
                track.valid_mask.push(false);
            }
            _ => return Err(bad()),
        }
    }
    Ok(track)
}

/// Long-format spectrum dump: `t,theta_deg,power` per grid point per window.
pub fn write_spectra(path: &Path, windows: &[WindowEstimate]) -> Result<()> {
    let mut out = String::from("t,theta_deg,power\n");
    for w in windows {
        for (theta, p) in &w.spectrum {
            let _ = writeln!(out, "{},{},{}", w.time_s, theta, p);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
