//! Shared fixtures for the criterion benches.

use rfgest::features::{FeatureKind, FeatureVector};
use rfgest::pipeline::{frame_features, process_capture, synth_dataset, synth_sample, DatasetConfig, ProcessConfig};
use rfgest::preprocess::SignalFrame;
use rfgest::sim::IQCapture;

/// One default 2 s capture of gesture 1.
pub fn capture() -> IQCapture {
    synth_sample(&DatasetConfig::default(), 1, 0).expect("capture")
}

pub fn frame() -> SignalFrame {
    process_capture(&capture(), &ProcessConfig::default()).expect("processing").frame
}

/// Feature records and 0-based labels of one bundle kind over a small
/// synthetic dataset.
pub fn training_set(kind: FeatureKind, classes: usize, per_class: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let cfg = DatasetConfig { classes, samples_per_class: per_class, ..DatasetConfig::default() };
    let captures = synth_dataset(&cfg).expect("dataset");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in &captures {
        let frame = process_capture(c, &ProcessConfig::default()).expect("processing").frame;
        let bundle: FeatureVector = frame_features(&frame)
            .expect("features")
            .into_iter()
            .find(|f| f.kind == kind)
            .expect("bundle");
        ys.push(bundle.label.expect("label") - 1);
        xs.push(bundle.values);
    }
    (xs, ys)
}
