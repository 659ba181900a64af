//! Stage file layouts shared by the subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rfgest::features::{read_features, write_features, FeatureKind, FeatureVector};
use rfgest::sim::{read_capture, IQCapture};

use crate::config::{to_toml, RunConfig};
use crate::error::{CliError, Result};

pub const VERSION: &str = concat!("rfgest ", env!("CARGO_PKG_VERSION"));

/// Creates `dir` and drops the resolved config and version string into it.
pub fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    write_text(&dir.join("config.toml"), &to_toml(cfg)?)?;
    write_text(&dir.join("version.txt"), &format!("{VERSION}\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} directory {} does not exist", dir.display())))
    }
}

pub fn capture_dir(dataset: &Path) -> PathBuf {
    dataset.join("captures")
}

/// All captures of a dataset directory, sorted by file name.
pub fn load_dataset(dataset: &Path) -> Result<Vec<IQCapture>> {
    let dir = capture_dir(dataset);
    require_dir(&dir, "dataset captures")?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no captures in {}", dir.display())));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let c = read_capture(&p)?;
        if c.header.sample_id.is_none() || c.header.label.is_none() {
            return Err(CliError::Data(format!("{} lacks a sample id or label", p.display())));
        }
        out.push(c);
    }
    Ok(out)
}

/// Replaces `cfg.dataset` with the settings recorded next to the captures,
/// so outputs describe the data they were built from.
pub fn adopt_dataset_config(dataset: &Path, cfg: &mut RunConfig) -> Result<()> {
    let path = dataset.join("config.toml");
    if path.is_file() {
        let recorded: RunConfig = toml::from_str(&read_text(&path)?)
            .map_err(|e| CliError::Data(format!("bad dataset config {}: {e}", path.display())))?;
        cfg.dataset = recorded.dataset;
    }
    Ok(())
}

pub fn capture_id(c: &IQCapture) -> &str {
    c.header.sample_id.as_deref().unwrap_or("")
}

pub fn track_file(id: &str, tag: usize, raw: bool) -> String {
    if raw {
        format!("{id}_t{tag}.raw.csv")
    } else {
        format!("{id}_t{tag}.csv")
    }
}

pub fn kind_stem(kind: FeatureKind) -> String {
    kind.to_string().to_lowercase()
}

/// One JSONL file per bundle kind; `bundles[i]` holds sample i's bundles in
/// `FeatureKind::ALL` order.
pub fn write_feature_dir(dir: &Path, bundles: &[Vec<FeatureVector>]) -> Result<()> {
    for (k, &kind) in FeatureKind::ALL.iter().enumerate() {
        let records: Vec<FeatureVector> = bundles.iter().map(|b| b[k].clone()).collect();
        write_features(&dir.join(format!("{}.jsonl", kind_stem(kind))), &records)?;
    }
    Ok(())
}

pub fn read_feature_dir(dir: &Path) -> Result<Vec<Vec<FeatureVector>>> {
    require_dir(dir, "features")?;
    let mut per_kind = Vec::new();
    for &kind in &FeatureKind::ALL {
        let records = read_features(&dir.join(format!("{}.jsonl", kind_stem(kind))))?;
        if let Some(r) = records.iter().find(|r| r.kind != kind) {
            return Err(CliError::Data(format!("{} record found in the {kind} file", r.kind)));
        }
        per_kind.push(records);
    }
    let n = per_kind[0].len();
    if n == 0 || per_kind.iter().any(|r| r.len() != n) {
        return Err(CliError::Data("feature files are empty or differ in length".into()));
    }
    let mut bundles = Vec::with_capacity(n);
    for i in 0..n {
        let b: Vec<FeatureVector> = per_kind.iter().map(|r| r[i].clone()).collect();
        if b.iter().any(|f| f.sample_id != b[0].sample_id || f.label != b[0].label) {
            return Err(CliError::Data(format!("feature files disagree at record {}", i + 1)));
        }
        bundles.push(b);
    }
    Ok(bundles)
}

pub fn write_split(path: &Path, ids: &[&str], test: &[usize]) -> Result<()> {
    let mut s = String::from("sample_id,set\n");
    for (i, id) in ids.iter().enumerate() {
        let set = if test.binary_search(&i).is_ok() { "test" } else { "train" };
        let _ = writeln!(s, "{id},{set}");
    }
    write_text(path, &s)
}

/// Sample ids of the test set.
pub fn read_split(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("sample_id,set") {
        return Err(CliError::Data(format!("{} is not a split file", path.display())));
    }
    let mut test = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        match line.split_once(',') {
            Some((id, "test")) => test.push(id.to_string()),
            Some((_, "train")) => {}
            _ => return Err(CliError::Data(format!("{}: bad row `{line}`", path.display()))),
        }
    }
    Ok(test)
}

/// Class posteriors of one model on a set of labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub ids: Vec<String>,
    /// 1-based.
    pub labels: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl PosteriorTable {
    pub fn classes(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,label");
        for c in 1..=self.classes() {
            let _ = write!(s, ",p{c}");
        }
        s.push('\n');
        for ((id, label), p) in self.ids.iter().zip(&self.labels).zip(&self.probs) {
            let _ = write!(s, "{id},{label}");
            for v in p {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let classes = header.split(',').count().saturating_sub(2);
        if !header.starts_with("sample_id,label,") || classes == 0 {
            return Err(bad("missing posterior header".into()));
        }
        let mut t = PosteriorTable { ids: Vec::new(), labels: Vec::new(), probs: Vec::new() };
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != classes + 2 {
                return Err(bad(format!("row `{line}` has {} fields", f.len())));
            }
            t.ids.push(f[0].to_string());
            t.labels.push(f[1].parse().map_err(|_| bad(format!("bad label in `{line}`")))?);
            let p: std::result::Result<Vec<f64>, _> = f[2..].iter().map(|v| v.parse::<f64>()).collect();
            t.probs.push(p.map_err(|_| bad(format!("bad probability in `{line}`")))?);
        }
        if t.ids.is_empty() {
            return Err(bad("no rows".into()));
        }
        Ok(t)
    }
}
