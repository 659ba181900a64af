//! Per-device feature bundles.
//!
//! - SPR: 14 statistics on each RSS and phase channel plus the four
//!   same-channel RSS/phase correlations (116)
//! - SA: 14 statistics on each AoA channel plus their correlation (29)
//! - WA: single-level db2 approximation of each AoA channel (2 × 19 = 38)

use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{SignalFrame, FRAME_LENGTH};

pub const STAT_NAMES: [&str; 14] = [
    "mode", "median", "q1", "q3", "mean", "max", "min", "range", "variance", "std", "moment3",
    "kurtosis", "skewness", "entropy",
];

const HIST_BINS: usize = 10;

/// db2 analysis low-pass filter, in convolution order.
pub const DB2_DEC_LO: [f64; 4] = [
    -0.129_409_522_550_921_45,
    0.224_143_868_041_857_35,
    0.836_516_303_737_469,
    0.482_962_913_144_690_25,
];

/// Approximation coefficients produced from one 35-sample frame channel.
pub const DB2_APPROX_LEN: usize = (FRAME_LENGTH + DB2_DEC_LO.len() - 1) / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeatureKind {
    Spr,
    Sa,
    Wa,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Spr, FeatureKind::Sa, FeatureKind::Wa];

    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Spr => 116,
            FeatureKind::Sa => 29,
            FeatureKind::Wa => 38,
        }
    }

    /// Stable feature names; this ordering is the on-disk contract.
    pub fn names(self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        match self {
            FeatureKind::Spr => {
                for ch in spr_channels() {
                    names.extend(STAT_NAMES.iter().map(|s| format!("{ch}.{s}")));
                }
                for (rss, phase) in spr_pairs() {
                    names.push(format!("corr.{rss}.{phase}"));
                }
            }
            FeatureKind::Sa => {
                for ch in ["aoa_t1", "aoa_t2"] {
                    names.extend(STAT_NAMES.iter().map(|s| format!("{ch}.{s}")));
                }
                names.push("corr.aoa_t1.aoa_t2".into());
            }
            FeatureKind::Wa => {
                for ch in ["aoa_t1", "aoa_t2"] {
                    names.extend((1..=DB2_APPROX_LEN).map(|i| format!("{ch}.db2_a{i:02}")));
                }
            }
        }
        names
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Spr => "SPR",
            FeatureKind::Sa => "SA",
            FeatureKind::Wa => "WA",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SPR" => Ok(FeatureKind::Spr),
            "SA" => Ok(FeatureKind::Sa),
            "WA" => Ok(FeatureKind::Wa),
            _ => Err(Error::param(format!("unknown feature kind {s:?}"))),
        }
    }
}

fn spr_channels() -> Vec<String> {
    let mut out = Vec::with_capacity(8);
    for kind in ["rss", "phase"] {
        for a in 1..=2 {
            for t in 1..=2 {
                out.push(format!("{kind}_a{a}_t{t}"));
            }
        }
    }
    out
}

fn spr_pairs() -> Vec<(String, String)> {
    let mut out = Vec::with_capacity(4);
    for a in 1..=2 {
        for t in 1..=2 {
            out.push((format!("rss_a{a}_t{t}"), format!("phase_a{a}_t{t}")));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sample_id: String,
    pub kind: FeatureKind,
    /// 1-based gesture class.
    pub label: Option<usize>,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.kind.dim() || self.names.len() != self.kind.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kind.dim(),
                actual: self.values.len(),
            });
        }
        if self.names != self.kind.names() {
            return Err(Error::data(format!("{} feature names out of order", self.kind)));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("sample {}: non-finite feature", self.sample_id)));
        }
        Ok(())
    }
}

/// Linear interpolation between order statistics at position p·(n−1).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 10 equal-width bins over [min, max]; the maximum lands in the last bin.
fn histogram(x: &[f64], min: f64, max: f64) -> [usize; HIST_BINS] {
    let mut counts = [0; HIST_BINS];
    let width = (max - min) / HIST_BINS as f64;
    for &v in x {
        let b = (((v - min) / width) as usize).min(HIST_BINS - 1);
        counts[b] += 1;
    }
    counts
}

/// Fourteen summary statistics in `STAT_NAMES` order.
///
/// Variance and moments are population moments. Mode is the centre of the
/// fullest histogram bin (lowest on ties) and entropy the Shannon entropy of
/// the same histogram in nats. A constant vector has zero spread, skewness,
/// kurtosis and entropy.
pub fn stat_features(x: &[f64]) -> Result<[f64; 14]> {
    if x.len() != FRAME_LENGTH {
        return Err(Error::DimensionMismatch { expected: FRAME_LENGTH, actual: x.len() });
    }
    let n = x.len() as f64;
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (min, max) = (sorted[0], sorted[x.len() - 1]);
    let mean = x.iter().sum::<f64>() / n;
    let moment = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let std = m2.sqrt();
    let (mode, entropy, skewness, kurtosis) = if max > min && std > 0.0 {
        let counts = histogram(x, min, max);
        let best = (0..HIST_BINS).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
        let width = (max - min) / HIST_BINS as f64;
        let entropy = -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>();
        (min + (best as f64 + 0.5) * width, entropy, m3 / std.powi(3), m4 / (m2 * m2) - 3.0)
    } else {
        (min, 0.0, 0.0, 0.0)
    };
    Ok([
        mode,
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.75),
        mean,
        max,
        min,
        max - min,
        m2,
        std,
        m3,
        kurtosis,
        skewness,
        entropy,
    ])
}

/// Sample Pearson correlation; 0 with a warning when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), actual: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::data("correlation needs at least two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        log::warn!("correlation of a constant signal, using 0");
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Half-sample symmetric extension: x[-1] = x[0], x[n] = x[n-1].
fn symmetric_at(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    let mut k = i.rem_euclid(2 * n);
    if k >= n {
        k = 2 * n - 1 - k;
    }
    x[k as usize]
}

/// Single-level db2 approximation coefficients with symmetric extension:
/// the full convolution with the low-pass filter, keeping odd positions.
pub fn dwt_db2_approx(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::data("wavelet transform needs at least two samples"));
    }
    let f = DB2_DEC_LO.len();
    let out_len = (x.len() + f - 1) / 2;
    Ok((0..out_len)
        .map(|o| {
            let i = (2 * o + 1) as isize;
            DB2_DEC_LO
                .iter()
                .enumerate()
                .map(|(j, h)| h * symmetric_at(x, i - j as isize))
                .sum()
        })
        .collect())
}

fn channel<'a>(frame: &'a SignalFrame, name: &str, kind: FeatureKind) -> Result<&'a [f64]> {
    let v = frame
        .channel(name)
        .ok_or_else(|| Error::data(format!("{kind} features need channel {name}; frame {} lacks it", frame.sample_id)))?;
    if v.len() != FRAME_LENGTH {
        return Err(Error::DimensionMismatch { expected: FRAME_LENGTH, actual: v.len() });
    }
    Ok(v)
}

pub fn build_bundle(frame: &SignalFrame, kind: FeatureKind) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(kind.dim());
    match kind {
        FeatureKind::Spr => {
            for ch in spr_channels() {
                values.extend(stat_features(channel(frame, &ch, kind)?)?);
            }
            for (rss, phase) in spr_pairs() {
                values.push(pearson(channel(frame, &rss, kind)?, channel(frame, &phase, kind)?)?);
            }
        }
        FeatureKind::Sa => {
            let a1 = channel(frame, "aoa_t1", kind)?;
            let a2 = channel(frame, "aoa_t2", kind)?;
            values.extend(stat_features(a1)?);
            values.extend(stat_features(a2)?);
            values.push(pearson(a1, a2)?);
        }
        FeatureKind::Wa => {
            for ch in ["aoa_t1", "aoa_t2"] {
                values.extend(dwt_db2_approx(channel(frame, ch, kind)?)?);
            }
        }
    }
    let fv = FeatureVector {
        sample_id: frame.sample_id.clone(),
        kind,
        label: frame.label,
        names: kind.names(),
        values,
    };
    fv.validate()?;
    Ok(fv)
}

/// JSON Lines, one feature record per line.
pub fn write_features(path: &Path, features: &[FeatureVector]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for fv in features {
        serde_json::to_writer(&mut w, fv)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fv: FeatureVector = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        fv.validate()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(fv);
    }
    Ok(out)
}
