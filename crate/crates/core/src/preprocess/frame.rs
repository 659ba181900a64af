use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::filters::{gaussian_filter, minmax_normalize, resample_at, savgol_filter, unwrap_phase, FRAME_LENGTH};
use crate::aoa::AoATrack;
use crate::error::{Error, Result};
use crate::sim::{iq_to_raw_streams, IQCapture};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub savgol_window: usize,
    pub savgol_order: usize,
    pub gaussian_sigma: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            savgol_window: 11,
            savgol_order: 3,
            gaussian_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameChannel {
    pub name: String,
    pub values: Vec<f64>,
}

/// Ten 35-sample channels of one gesture sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFrame {
    pub sample_id: String,
    /// 1-based gesture class, absent for unlabelled data.
    pub label: Option<usize>,
    /// Set when an RSS channel was constant and filled with 0.5.
    pub degenerate: bool,
    pub channels: Vec<FrameChannel>,
}

/// Channel order: RSS per (antenna, tag), phase per (antenna, tag), AoA per tag.
pub fn channel_names() -> Vec<String> {
    let mut names = Vec::with_capacity(10);
    for kind in ["rss", "phase"] {
        for antenna in 1..=2 {
            for tag in 1..=2 {
                names.push(format!("{kind}_a{antenna}_t{tag}"));
            }
        }
    }
    names.push("aoa_t1".into());
    names.push("aoa_t2".into());
    names
}

impl SignalFrame {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Checks the frame invariants: every expected channel present, exactly
    /// 35 finite samples each, RSS within [0, 1].
    pub fn validate(&self) -> Result<()> {
        for name in channel_names() {
            let v = self
                .channel(&name)
                .ok_or_else(|| Error::data(format!("frame {} lacks channel {name}", self.sample_id)))?;
            if v.len() != FRAME_LENGTH {
                return Err(Error::data(format!(
                    "frame {} channel {name} has {} samples, expected {FRAME_LENGTH}",
                    self.sample_id,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::data(format!("frame {} channel {name} is not finite", self.sample_id)));
            }
            if name.starts_with("rss") && v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::data(format!("frame {} RSS channel {name} leaves [0, 1]", self.sample_id)));
            }
        }
        Ok(())
    }
}

/// Assembles one frame from a raw capture and the two smoothed AoA tracks.
pub fn build_frame(capture: &IQCapture, tracks: &[AoATrack], config: &FrameConfig) -> Result<SignalFrame> {
    if capture.header.num_tags != 2 || tracks.len() != 2 {
        return Err(Error::data("frames need two tags and two AoA tracks"));
    }
    let streams = iq_to_raw_streams(&capture.derotated())?;
    let h = &capture.header;
    let (t_start, t_end) = (h.slot_time(1), h.slot_time(h.num_slots));
    let sample_id = h.sample_id.clone().unwrap_or_default();
    let mut degenerate = false;
    let mut rss = Vec::with_capacity(4);
    let mut phase = Vec::with_capacity(4);
    for ch in &streams.channels {
        let times: Vec<f64> = ch.valid.iter().zip(&ch.times_s).filter(|(v, _)| **v).map(|(_, t)| *t).collect();
        if times.len() < 2 {
            return Err(Error::data(format!(
                "sample {sample_id}: channel a{}t{} has {} detected reads",
                ch.antenna,
                ch.tag,
                times.len()
            )));
        }
        let ok = vec![true; times.len()];
        let raw_rss: Vec<f64> = ch.rss_db.iter().zip(&ch.valid).filter(|(_, v)| **v).map(|(x, _)| *x).collect();
        let norm = match minmax_normalize(&raw_rss) {
            Ok(v) => v,
            Err(_) => {
                log::warn!("sample {sample_id}: constant RSS on a{}t{}, filling with 0.5", ch.antenna, ch.tag);
                degenerate = true;
                vec![0.5; raw_rss.len()]
            }
        };
        rss.push((ch.antenna, ch.tag, resample_at(&times, &norm, &ok, t_start, t_end, FRAME_LENGTH)?));

        let raw_phase: Vec<f64> = ch.phase_rad.iter().zip(&ch.valid).filter(|(_, v)| **v).map(|(x, _)| *x).collect();
        let mut p = unwrap_phase(&raw_phase);
        if p.len() >= config.savgol_window {
            p = savgol_filter(&p, config.savgol_window, config.savgol_order)?;
        } else {
            log::warn!("sample {sample_id}: a{}t{} too short for Savitzky-Golay, skipped", ch.antenna, ch.tag);
        }
        let p = gaussian_filter(&p, config.gaussian_sigma)?;
        phase.push((ch.antenna, ch.tag, resample_at(&times, &p, &ok, t_start, t_end, FRAME_LENGTH)?));
    }
    let mut channels = Vec::with_capacity(10);
    for (kind, list) in [("rss", rss), ("phase", phase)] {
        for (antenna, tag, values) in list {
            channels.push(FrameChannel { name: format!("{kind}_a{antenna}_t{tag}"), values });
        }
    }
    for (i, track) in tracks.iter().enumerate() {
        if track.valid_count() < 2 {
            return Err(Error::data(format!("sample {sample_id}: AoA track {} has < 2 valid points", i + 1)));
        }
        let (t0, t1) = (track.times_s[0], track.times_s[track.len() - 1]);
        let values = resample_at(&track.times_s, &track.azimuth_deg, &track.valid_mask, t0, t1, FRAME_LENGTH)?;
        channels.push(FrameChannel { name: format!("aoa_t{}", i + 1), values });
    }
    let frame = SignalFrame { sample_id, label: h.label, degenerate, channels };
    frame.validate()?;
    Ok(frame)
}

/// JSON Lines, one frame per line.
pub fn write_frames(path: &Path, frames: &[SignalFrame]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<Vec<SignalFrame>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: SignalFrame = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aoa::{estimate_track, kalman_smooth, AoaConfig};
    use crate::sim::{gesture_trajectory, synth_capture, ArrayGeometry, SimConfig};

    fn sample(class: usize, seed: u64) -> (IQCapture, Vec<AoATrack>) {
        let traj = gesture_trajectory(class, 2.0, seed).unwrap();
        let cfg = SimConfig { rng_seed: seed, ..SimConfig::default() };
        let mut cap = synth_capture(&traj, &ArrayGeometry::default(), &cfg).unwrap();
        cap.header.label = Some(class);
        cap.header.sample_id = Some(format!("c{class}s{seed}"));
        let tracks = (1..=2)
            .map(|tag| {
                let (raw, _) = estimate_track(&cap, tag, &AoaConfig::default()).unwrap();
                kalman_smooth(&raw, 1.0, 0.05).unwrap()
            })
            .collect();
        (cap, tracks)
    }

    #[test]
    fn frame_invariants_hold() {
        for class in [1, 8, 16, 21] {
            let (cap, tracks) = sample(class, 3);
            let f = build_frame(&cap, &tracks, &FrameConfig::default()).unwrap();
            assert_eq!(f.channels.len(), 10);
            let names: Vec<_> = f.channels.iter().map(|c| c.name.clone()).collect();
            assert_eq!(names, channel_names());
            assert_eq!(f.label, Some(class));
            f.validate().unwrap();
        }
    }

    #[test]
    fn frames_round_trip() {
        let (cap, tracks) = sample(5, 9);
        let f = build_frame(&cap, &tracks, &FrameConfig::default()).unwrap();
        let path = std::env::temp_dir().join(format!("rfgest-frames-{}.jsonl", std::process::id()));
        write_frames(&path, &[f.clone(), f.clone()]).unwrap();
        let back = read_frames(&path).unwrap();
        assert_eq!(back, vec![f.clone(), f]);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn validate_rejects_bad_frames() {
        let (cap, tracks) = sample(2, 1);
        let mut f = build_frame(&cap, &tracks, &FrameConfig::default()).unwrap();
        f.channels[0].values[3] = 1.5;
        assert!(f.validate().is_err());
        f.channels[0].values.pop();
        assert!(f.validate().is_err());
        f.channels.remove(0);
        assert!(f.validate().is_err());
    }
}
