//! End-to-end orchestration: synthetic dataset, per-sample AoA and
//! preprocessing, feature bundles, stratified split, training of the three
//! device models and fused evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoa::{estimate_track, kalman_smooth, AoATrack, AoaConfig, KalmanConfig, WindowEstimate};
use crate::circuit::{em_fit, CircuitSpec, EinsumCircuit, EmConfig};
use crate::error::{Error, Result};
use crate::features::{build_bundle, FeatureKind, FeatureVector};
use crate::fusion::{evaluate, fuse_predict, EvalReport, FusionRule};
use crate::preprocess::{build_frame, FrameConfig, SignalFrame};
use crate::sim::{catalog, gesture_trajectory, synth_capture, ArrayGeometry, IQCapture, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub geometry: ArrayGeometry,
    pub sim: SimConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 21,
            samples_per_class: 20,
            duration_s: 2.0,
            seed: 0,
            geometry: ArrayGeometry::default(),
            sim: SimConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > catalog().len() {
            return Err(Error::param(format!("classes must be in 1..={}", catalog().len())));
        }
        if self.samples_per_class == 0 {
            return Err(Error::param("samples_per_class must be >= 1"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::param("duration_s must be positive"));
        }
        self.geometry.validate()?;
        self.sim.validate()
    }
}

/// splitmix64 finalizer, used to derive independent per-sample seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sample_seed(seed: u64, class: usize, index: usize) -> u64 {
    mix(mix(mix(seed) ^ class as u64) ^ index as u64)
}

pub fn sample_id(class: usize, index: usize) -> String {
    format!("g{class:02}_s{index:03}")
}

/// One labelled capture; `class` is 1-based, `index` 0-based.
pub fn synth_sample(cfg: &DatasetConfig, class: usize, index: usize) -> Result<IQCapture> {
    let seed = sample_seed(cfg.seed, class, index);
    let traj = gesture_trajectory(class, cfg.duration_s, seed)?;
    let sim = SimConfig { rng_seed: seed, ..cfg.sim.clone() };
    let mut capture = synth_capture(&traj, &cfg.geometry, &sim)?;
    capture.header.sample_id = Some(sample_id(class, index));
    capture.header.label = Some(class);
    Ok(capture)
}

/// All captures, class-major.
pub fn synth_dataset(cfg: &DatasetConfig) -> Result<Vec<IQCapture>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (1..=cfg.classes)
        .flat_map(|c| (0..cfg.samples_per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter().map(|&(c, i)| synth_sample(cfg, c, i)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessConfig {
    pub aoa: AoaConfig,
    pub kalman: KalmanConfig,
    pub frame: FrameConfig,
}

#[derive(Debug, Clone)]
pub struct ProcessedSample {
    pub raw_tracks: Vec<AoATrack>,
    pub windows: Vec<Vec<WindowEstimate>>,
    pub smoothed: Vec<AoATrack>,
    pub frame: SignalFrame,
}

/// AoA per tag (MUSIC windows, then Kalman smoothing) and frame assembly.
pub fn process_capture(capture: &IQCapture, cfg: &ProcessConfig) -> Result<ProcessedSample> {
    let mut raw_tracks = Vec::new();
    let mut windows = Vec::new();
    let mut smoothed = Vec::new();
    for tag in 1..=capture.header.num_tags {
        let (raw, w) = estimate_track(capture, tag, &cfg.aoa)?;
        smoothed.push(kalman_smooth(&raw, cfg.kalman.process_noise, cfg.kalman.measurement_noise)?);
        raw_tracks.push(raw);
        windows.push(w);
    }
    let frame = build_frame(capture, &smoothed, &cfg.frame)?;
    Ok(ProcessedSample { raw_tracks, windows, smoothed, frame })
}

/// All three bundles of one frame, in `FeatureKind::ALL` order.
pub fn frame_features(frame: &SignalFrame) -> Result<Vec<FeatureVector>> {
    FeatureKind::ALL.iter().map(|&k| build_bundle(frame, k)).collect()
}

/// Per-class shuffled split; each class with n samples contributes
/// round(n·test_fraction) test samples, but at least one stays in training.
/// Returns sorted (train, test) indices.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::param("test_fraction must be in [0, 1)"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct TrainConfig {
    pub em: EmConfig,
    pub structure_seed: u64,
    /// Overrides of the per-device (D, K, L, R) defaults; C and the variable
    /// count always follow the data.
    pub spr: Option<[usize; 4]>,
    pub sa: Option<[usize; 4]>,
    pub wa: Option<[usize; 4]>,
}


impl TrainConfig {
    pub fn spec(&self, kind: FeatureKind, classes: usize) -> CircuitSpec {
        let seed = self.structure_seed.wrapping_add(kind as u64);
        let mut spec = CircuitSpec::for_kind(kind, classes, seed);
        let over = match kind {
            FeatureKind::Spr => self.spr,
            FeatureKind::Sa => self.sa,
            FeatureKind::Wa => self.wa,
        };
        if let Some([d, k, l, r]) = over {
            spec.depth = d;
            spec.sum_components = k;
            spec.leaf_distributions = l;
            spec.repetitions = r;
        }
        spec
    }
}

/// Trains one circuit on feature records with 1-based labels.
pub fn train_model(kind: FeatureKind, records: &[&FeatureVector], classes: usize, cfg: &TrainConfig) -> Result<EinsumCircuit> {
    let mut xs = Vec::with_capacity(records.len());
    let mut ys = Vec::with_capacity(records.len());
    for r in records {
        if r.kind != kind {
            return Err(Error::data(format!("expected {kind} features, found {}", r.kind)));
        }
        let label = r.label.ok_or_else(|| Error::data(format!("sample {} has no label", r.sample_id)))?;
        if label == 0 || label > classes {
            return Err(Error::data(format!("sample {}: label {label} outside 1..={classes}", r.sample_id)));
        }
        xs.push(r.values.clone());
        ys.push(label - 1);
    }
    let mut circuit = EinsumCircuit::new(cfg.spec(kind, classes))?;
    let em = EmConfig { init_seed: cfg.em.init_seed.wrapping_add(kind as u64), ..cfg.em };
    em_fit(&mut circuit, &xs, &ys, &em)?;
    Ok(circuit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_model: Vec<(FeatureKind, EvalReport)>,
    pub fused: EvalReport,
    /// Per test sample: (sample id, 1-based truth, 1-based fused prediction).
    pub predictions: Vec<(String, usize, usize)>,
}

impl Evaluation {
    pub fn model_accuracy(&self, kind: FeatureKind) -> Option<f64> {
        self.per_model.iter().find(|(k, _)| *k == kind).map(|(_, r)| r.accuracy)
    }

    pub fn best_single_accuracy(&self) -> f64 {
        self.per_model.iter().map(|(_, r)| r.accuracy).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Uniform-prior posteriors of every model on every sample, then fusion.
/// `samples[i]` holds the three bundles of test sample i in model order.
pub fn evaluate_models(
    models: &[(FeatureKind, EinsumCircuit)],
    samples: &[Vec<FeatureVector>],
    rule: FusionRule,
    parallel: bool,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::data("no test samples"));
    }
    let classes = models.first().ok_or_else(|| Error::data("no models"))?.1.spec().classes;
    let per_sample = |bundles: &Vec<FeatureVector>| -> Result<(Vec<usize>, usize, usize, String)> {
        let mut posts = Vec::with_capacity(models.len());
        for (kind, model) in models {
            let fv = bundles
                .iter()
                .find(|f| f.kind == *kind)
                .ok_or_else(|| Error::data(format!("sample lacks {kind} features")))?;
            posts.push(model.posterior_uniform(&fv.values)?);
        }
        let first = &bundles[0];
        let truth = first.label.ok_or_else(|| Error::data(format!("sample {} has no label", first.sample_id)))?;
        if truth == 0 || truth > classes {
            return Err(Error::data(format!("sample {}: label {truth} outside 1..={classes}", first.sample_id)));
        }
        let singles = posts.iter().map(|p| crate::circuit::argmax_lowest(p)).collect();
        let refs: Vec<&[f64]> = posts.iter().map(Vec::as_slice).collect();
        Ok((singles, fuse_predict(&refs, rule)?, truth - 1, first.sample_id.clone()))
    };
    let results: Vec<_> = if parallel {
        samples.par_iter().map(per_sample).collect::<Result<_>>()?
    } else {
        samples.iter().map(per_sample).collect::<Result<_>>()?
    };
    let truth: Vec<usize> = results.iter().map(|r| r.2).collect();
    let mut per_model = Vec::new();
    for (m, (kind, _)) in models.iter().enumerate() {
        let pred: Vec<usize> = results.iter().map(|r| r.0[m]).collect();
        per_model.push((*kind, evaluate(&truth, &pred, classes)?));
    }
    let fused_pred: Vec<usize> = results.iter().map(|r| r.1).collect();
    let fused = evaluate(&truth, &fused_pred, classes)?;
    let predictions = results.iter().map(|r| (r.3.clone(), r.2 + 1, r.1 + 1)).collect();
    Ok(Evaluation { per_model, fused, predictions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub process: ProcessConfig,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub fusion: FusionRule,
    /// Parallel execution; results do not depend on it.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            process: ProcessConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
            split_seed: 0,
            fusion: FusionRule::Product,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub frames: Vec<SignalFrame>,
    /// Bundles per frame, `FeatureKind::ALL` order.
    pub features: Vec<Vec<FeatureVector>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub models: Vec<(FeatureKind, EinsumCircuit)>,
    pub evaluation: Evaluation,
    /// Samples dropped because processing failed.
    pub skipped: Vec<String>,
}

/// Frames and features of every capture; failures are logged and skipped.
pub fn extract_all(
    captures: &[IQCapture],
    cfg: &ProcessConfig,
    parallel: bool,
) -> (Vec<SignalFrame>, Vec<Vec<FeatureVector>>, Vec<String>) {
    let job = |c: &IQCapture| process_capture(c, cfg).and_then(|p| Ok((frame_features(&p.frame)?, p.frame)));
    let results: Vec<Result<(Vec<FeatureVector>, SignalFrame)>> = if parallel {
        captures.par_iter().map(job).collect()
    } else {
        captures.iter().map(job).collect()
    };
    let (mut frames, mut features, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for (capture, r) in captures.iter().zip(results) {
        match r {
            Ok((f, frame)) => {
                features.push(f);
                frames.push(frame);
            }
            Err(e) => {
                let id = capture.header.sample_id.clone().unwrap_or_default();
                log::warn!("skipping sample {id}: {e}");
                skipped.push(id);
            }
        }
    }
    (frames, features, skipped)
}

/// Trains the three device models on the given sample indices; degenerate
/// frames are left out with a warning.
pub fn train_all(
    frames: &[SignalFrame],
    features: &[Vec<FeatureVector>],
    train: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<Vec<(FeatureKind, EinsumCircuit)>> {
    let usable: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| {
            if frames[i].degenerate {
                log::warn!("leaving degenerate sample {} out of training", frames[i].sample_id);
            }
            !frames[i].degenerate
        })
        .collect();
    FeatureKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let records: Vec<&FeatureVector> = usable.iter().map(|&i| &features[i][k]).collect();
            Ok((kind, train_model(kind, &records, classes, cfg)?))
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let captures = synth_dataset(&cfg.dataset)?;
    let (frames, features, skipped) = extract_all(&captures, &cfg.process, cfg.parallel);
    let labels: Vec<usize> = frames.iter().map(|f| f.label.unwrap_or(0)).collect();
    let (train, test) = stratified_split(&labels, cfg.test_fraction, cfg.split_seed)?;
    let train_cfg = TrainConfig { em: EmConfig { parallel: cfg.parallel, ..cfg.train.em }, ..cfg.train.clone() };
    let models = train_all(&frames, &features, &train, cfg.dataset.classes, &train_cfg)?;
    let test_samples: Vec<Vec<FeatureVector>> = test.iter().map(|&i| features[i].clone()).collect();
    let evaluation = evaluate_models(&models, &test_samples, cfg.fusion, cfg.parallel)?;
    Ok(ExperimentResult { frames, features, train, test, models, evaluation, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<usize> = (1..=21).flat_map(|c| std::iter::repeat_n(c, 20)).collect();
        let (train, test) = stratified_split(&labels, 0.2, 3).unwrap();
        assert_eq!(test.len(), 84);
        assert_eq!(train.len(), 336);
        for c in 1..=21 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 4);
        }
        assert_eq!(stratified_split(&labels, 0.2, 3).unwrap(), (train.clone(), test.clone()));
        assert_ne!(stratified_split(&labels, 0.2, 4).unwrap().1, test);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..420).collect::<Vec<_>>());
    }

    #[test]
    fn sample_seeds_differ() {
        let mut seeds: Vec<u64> = (1..=21).flat_map(|c| (0..20).map(move |i| sample_seed(0, c, i))).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 420);
    }

    #[test]
    fn small_experiment_runs_end_to_end() {
        let cfg = ExperimentConfig {
            dataset: DatasetConfig { classes: 3, samples_per_class: 5, ..DatasetConfig::default() },
            train: TrainConfig { em: EmConfig { epochs: 5, ..EmConfig::default() }, ..TrainConfig::default() },
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.skipped.is_empty());
        assert_eq!(r.test.len(), 3);
        assert_eq!(r.evaluation.per_model.len(), 3);
        assert_eq!(r.evaluation.fused.samples, 3);
    }

    #[test]
    fn bad_dataset_config() {
        let cfg = DatasetConfig { samples_per_class: 0, ..DatasetConfig::default() };
        assert!(synth_dataset(&cfg).is_err());
        let cfg = DatasetConfig { classes: 22, ..DatasetConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
