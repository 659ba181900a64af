use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rfgest::aoa::{estimate_track, kalman_smooth, read_track, write_spectra, write_track, AoATrack, WindowEstimate};
use rfgest::circuit::{argmax_lowest, is_monotone, EinsumCircuit};
use rfgest::cost::{published_check, CostReport};
use rfgest::features::{FeatureKind, FeatureVector};
use rfgest::fusion::{evaluate, fuse_predict, EvalReport};
use rfgest::pipeline::{frame_features, stratified_split, synth_dataset, train_model, ProcessConfig};
use rfgest::preprocess::{build_frame, read_frames, write_frames, SignalFrame};
use rfgest::sim::{write_capture, IQCapture};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{
    adopt_dataset_config, capture_dir, capture_id, kind_stem, load_dataset, prepare_dir, read_feature_dir, read_split, require_dir,
    track_file, write_feature_dir, write_split, write_text, PosteriorTable,
};

fn map_all<T: Sync, R: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Invariant(format!("serialization failed: {e}")))
}

/// Keeps the successes; failed samples are logged and listed in `skipped.txt`.
fn keep_ok<T>(dir: &Path, ids: &[&str], results: Vec<rfgest::Result<T>>) -> Result<Vec<T>> {
    let mut ok = Vec::new();
    let mut skipped = String::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("skipping sample {id}: {e}");
                let _ = writeln!(skipped, "{id}\t{e}");
            }
        }
    }
    if !skipped.is_empty() {
        write_text(&dir.join("skipped.txt"), &skipped)?;
    }
    if ok.is_empty() {
        return Err(CliError::Data("every sample failed".into()));
    }
    Ok(ok)
}

pub fn simulate(out: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.dataset.validate()?;
    let captures = synth_dataset(&cfg.dataset)?;
    prepare_dir(out, cfg)?;
    let dir = capture_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut labels = String::from("sample_id,label\n");
    for c in &captures {
        let id = capture_id(c);
        write_capture(&dir.join(format!("{id}.csv")), c)?;
        let _ = writeln!(labels, "{id},{}", c.header.label.unwrap_or(0));
    }
    write_text(&out.join("labels.csv"), &labels)?;
    log::info!("wrote {} captures to {}", captures.len(), dir.display());
    Ok(())
}

struct Tracks {
    raw: Vec<AoATrack>,
    windows: Vec<Vec<WindowEstimate>>,
    smoothed: Vec<AoATrack>,
}

fn estimate_tracks(c: &IQCapture, cfg: &ProcessConfig) -> rfgest::Result<Tracks> {
    let mut t = Tracks { raw: Vec::new(), windows: Vec::new(), smoothed: Vec::new() };
    for tag in 1..=c.header.num_tags {
        let (raw, w) = estimate_track(c, tag, &cfg.aoa)?;
        t.smoothed.push(kalman_smooth(&raw, cfg.kalman.process_noise, cfg.kalman.measurement_noise)?);
        t.raw.push(raw);
        t.windows.push(w);
    }
    Ok(t)
}

fn write_tracks(dir: &Path, id: &str, t: &Tracks, spectra: bool) -> Result<()> {
    for (k, ((raw, smooth), w)) in t.raw.iter().zip(&t.smoothed).zip(&t.windows).enumerate() {
        write_track(&dir.join(track_file(id, k + 1, true)), raw)?;
        write_track(&dir.join(track_file(id, k + 1, false)), smooth)?;
        if spectra {
            write_spectra(&dir.join(format!("{id}_t{}.spectrum.csv", k + 1)), w)?;
        }
    }
    Ok(())
}

pub fn aoa(dataset: &Path, out: &Path, spectra: bool, cfg: &mut RunConfig) -> Result<()> {
    let captures = load_dataset(dataset)?;
    adopt_dataset_config(dataset, cfg)?;
    let cfg = &*cfg;
    prepare_dir(out, cfg)?;
    let results = map_all(&captures, cfg.parallel, |c| estimate_tracks(c, &cfg.process));
    let ids: Vec<&str> = captures.iter().map(capture_id).collect();
    let mut written = 0;
    for (id, r) in ids.iter().zip(&results) {
        if let Ok(t) = r {
            write_tracks(out, id, t, spectra)?;
            written += 1;
        }
    }
    keep_ok(out, &ids, results)?;
    log::info!("wrote AoA tracks of {written} samples to {}", out.display());
    Ok(())
}

pub fn preprocess(dataset: &Path, aoa_dir: Option<&Path>, out: &Path, cfg: &mut RunConfig) -> Result<()> {
    let captures = load_dataset(dataset)?;
    adopt_dataset_config(dataset, cfg)?;
    let cfg = &*cfg;
    if let Some(dir) = aoa_dir {
        require_dir(dir, "AoA")?;
    }
    prepare_dir(out, cfg)?;
    let results = map_all(&captures, cfg.parallel, |c| {
        let tracks = match aoa_dir {
            Some(dir) => (1..=c.header.num_tags)
                .map(|t| read_track(&dir.join(track_file(capture_id(c), t, false))))
                .collect::<rfgest::Result<Vec<_>>>()?,
            None => estimate_tracks(c, &cfg.process)?.smoothed,
        };
        build_frame(c, &tracks, &cfg.process.frame)
    });
    let ids: Vec<&str> = captures.iter().map(capture_id).collect();
    let frames = keep_ok(out, &ids, results)?;
    write_frames(&out.join("frames.jsonl"), &frames)?;
    log::info!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

fn extract_features(frames: &[SignalFrame], parallel: bool) -> Result<Vec<Vec<FeatureVector>>> {
    let bundles: rfgest::Result<Vec<_>> = map_all(frames, parallel, frame_features).into_iter().collect();
    Ok(bundles?)
}

pub fn features(frames_path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let frames = read_frames(frames_path)?;
    if frames.is_empty() {
        return Err(CliError::Data(format!("no frames in {}", frames_path.display())));
    }
    let bundles = extract_features(&frames, cfg.parallel)?;
    prepare_dir(out, cfg)?;
    write_feature_dir(out, &bundles)?;
    log::info!("wrote {} feature bundles per kind to {}", bundles.len(), out.display());
    Ok(())
}

struct Trained {
    test: Vec<usize>,
    models: Vec<(FeatureKind, EinsumCircuit)>,
}

fn bundle_label(b: &[FeatureVector]) -> Result<usize> {
    b[0].label.ok_or_else(|| CliError::Data(format!("sample {} has no label", b[0].sample_id)))
}

/// Stratified split and one circuit per bundle kind; samples in `exclude`
/// (degenerate frames) are kept out of training.
fn train_split(bundles: &[Vec<FeatureVector>], exclude: &HashSet<String>, cfg: &RunConfig) -> Result<Trained> {
    let labels: Vec<usize> = bundles.iter().map(|b| bundle_label(b)).collect::<Result<_>>()?;
    let classes = labels.iter().copied().max().unwrap_or(0);
    if labels.contains(&0) {
        return Err(CliError::Data("labels are 1-based; found 0".into()));
    }
    let (train, test) = stratified_split(&labels, cfg.test_fraction, cfg.split_seed)?;
    if test.is_empty() {
        return Err(CliError::Usage("test split is empty; raise test_fraction or samples".into()));
    }
    let usable: Vec<usize> = train.into_iter().filter(|&i| !exclude.contains(&bundles[i][0].sample_id)).collect();
    let kinds: Vec<(usize, FeatureKind)> = FeatureKind::ALL.iter().copied().enumerate().collect();
    let models = map_all(&kinds, cfg.parallel, |&(k, kind)| {
        let records: Vec<&FeatureVector> = usable.iter().map(|&i| &bundles[i][k]).collect();
        train_model(kind, &records, classes, &cfg.train).map(|m| (kind, m))
    });
    let models: rfgest::Result<Vec<_>> = models.into_iter().collect();
    Ok(Trained { test, models: models? })
}

fn write_models(dir: &Path, bundles: &[Vec<FeatureVector>], trained: &Trained) -> Result<()> {
    let ids: Vec<&str> = bundles.iter().map(|b| b[0].sample_id.as_str()).collect();
    write_split(&dir.join("split.csv"), &ids, &trained.test)?;
    for (kind, model) in &trained.models {
        model.save(&dir.join(format!("{}.json", kind_stem(*kind))))?;
    }
    Ok(())
}

pub fn train(features_dir: &Path, frames: Option<&Path>, out: &Path, cfg: &RunConfig) -> Result<()> {
    let bundles = read_feature_dir(features_dir)?;
    let exclude: HashSet<String> = match frames {
        Some(p) => read_frames(p)?.into_iter().filter(|f| f.degenerate).map(|f| f.sample_id).collect(),
        None => HashSet::new(),
    };
    let trained = train_split(&bundles, &exclude, cfg)?;
    prepare_dir(out, cfg)?;
    write_models(out, &bundles, &trained)?;
    for (kind, m) in &trained.models {
        if let Some(t) = m.training() {
            log::info!("{kind}: log-likelihood {:.3} -> {:.3}", t.loglik_history[0], t.loglik_history.last().unwrap());
        }
    }
    Ok(())
}

fn posterior_tables(
    models: &[(FeatureKind, EinsumCircuit)],
    samples: &[&Vec<FeatureVector>],
    parallel: bool,
) -> Result<Vec<(FeatureKind, PosteriorTable)>> {
    let ids: Vec<String> = samples.iter().map(|b| b[0].sample_id.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|b| bundle_label(b)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (kind, model) in models {
        let k = FeatureKind::ALL.iter().position(|x| x == kind).unwrap_or(0);
        let probs: rfgest::Result<Vec<Vec<f64>>> =
            map_all(samples, parallel, |b| model.posterior_uniform(&b[k].values)).into_iter().collect();
        out.push((*kind, PosteriorTable { ids: ids.clone(), labels: labels.clone(), probs: probs? }));
    }
    Ok(out)
}

fn report_from(labels: &[usize], predicted0: &[usize], classes: usize) -> Result<EvalReport> {
    if let Some(&l) = labels.iter().find(|&&l| l == 0 || l > classes) {
        return Err(CliError::Data(format!("label {l} outside 1..={classes}")));
    }
    let truth: Vec<usize> = labels.iter().map(|l| l - 1).collect();
    Ok(evaluate(&truth, predicted0, classes)?)
}

fn single_report(t: &PosteriorTable) -> Result<EvalReport> {
    let pred: Vec<usize> = t.probs.iter().map(|p| argmax_lowest(p)).collect();
    report_from(&t.labels, &pred, t.classes())
}

fn write_report_files(dir: &Path, stem: &str, title: &str, r: &EvalReport) -> Result<()> {
    write_text(&dir.join(format!("report_{stem}.txt")), &r.to_text(title))?;
    write_text(&dir.join(format!("confusion_{stem}.csv")), &r.confusion.to_csv(false))?;
    write_text(&dir.join(format!("confusion_{stem}_normalized.csv")), &r.confusion.to_csv(true))
}

fn write_eval(dir: &Path, tables: &[(FeatureKind, PosteriorTable)]) -> Result<Vec<(FeatureKind, EvalReport)>> {
    let mut reports = Vec::new();
    for (kind, t) in tables {
        let stem = kind_stem(*kind);
        write_text(&dir.join(format!("posteriors_{stem}.csv")), &t.to_csv())?;
        let r = single_report(t)?;
        write_report_files(dir, &stem, &format!("{kind} model"), &r)?;
        reports.push((*kind, r));
    }
    let metrics: BTreeMap<String, &EvalReport> = reports.iter().map(|(k, r)| (k.to_string(), r)).collect();
    write_text(&dir.join("metrics.json"), &to_json(&metrics)?)?;
    Ok(reports)
}

pub fn load_models(dir: &Path) -> Result<Vec<(FeatureKind, EinsumCircuit)>> {
    require_dir(dir, "model")?;
    FeatureKind::ALL
        .iter()
        .map(|&kind| Ok((kind, EinsumCircuit::load(&dir.join(format!("{}.json", kind_stem(kind))))?)))
        .collect()
}

pub fn eval(models_dir: &Path, features_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let models = load_models(models_dir)?;
    let test_ids = read_split(&models_dir.join("split.csv"))?;
    let bundles = read_feature_dir(features_dir)?;
    let samples: Vec<&Vec<FeatureVector>> = test_ids
        .iter()
        .map(|id| {
            bundles
                .iter()
                .find(|b| &b[0].sample_id == id)
                .ok_or_else(|| CliError::Data(format!("test sample {id} missing from {}", features_dir.display())))
        })
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(CliError::Data("split has no test samples".into()));
    }
    let tables = posterior_tables(&models, &samples, cfg.parallel)?;
    prepare_dir(out, cfg)?;
    for (kind, r) in write_eval(out, &tables)? {
        log::info!("{kind}: accuracy {:.2}%", r.accuracy);
    }
    Ok(())
}

struct Fused {
    report: EvalReport,
    singles: Vec<(FeatureKind, f64)>,
}

fn fuse_tables(dir: &Path, tables: &[(FeatureKind, PosteriorTable)], cfg: &RunConfig) -> Result<Fused> {
    let first = &tables.first().ok_or_else(|| CliError::Data("nothing to fuse".into()))?.1;
    for (kind, t) in tables {
        if t.ids != first.ids || t.labels != first.labels {
            return Err(CliError::Data(format!("{kind} posteriors cover different samples")));
        }
    }
    let mut pred = Vec::with_capacity(first.ids.len());
    for i in 0..first.ids.len() {
        let p: Vec<&[f64]> = tables.iter().map(|(_, t)| t.probs[i].as_slice()).collect();
        pred.push(fuse_predict(&p, cfg.fusion)?);
    }
    let report = report_from(&first.labels, &pred, first.classes())?;
    let mut predictions = String::from("sample_id,label,predicted\n");
    for ((id, l), p) in first.ids.iter().zip(&first.labels).zip(&pred) {
        let _ = writeln!(predictions, "{id},{l},{}", p + 1);
    }
    let singles: Vec<(FeatureKind, f64)> =
        tables.iter().map(|(k, t)| single_report(t).map(|r| (*k, r.accuracy))).collect::<Result<_>>()?;
    let rule = format!("{:?}", cfg.fusion).to_lowercase();
    let mut text = report.to_text(&format!("fused ({rule} rule)"));
    text.push('\n');
    for (k, a) in &singles {
        let _ = writeln!(text, "{:<10}{a:>7.2}", format!("{k} acc"));
    }
    write_text(&dir.join("predictions.csv"), &predictions)?;
    write_text(&dir.join("report_fused.txt"), &text)?;
    write_text(&dir.join("confusion_fused.csv"), &report.confusion.to_csv(false))?;
    write_text(&dir.join("confusion_fused_normalized.csv"), &report.confusion.to_csv(true))?;
    write_text(&dir.join("metrics.json"), &to_json(&report)?)?;
    Ok(Fused { report, singles })
}

pub fn fuse(eval_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    require_dir(eval_dir, "evaluation")?;
    let tables: Vec<(FeatureKind, PosteriorTable)> = FeatureKind::ALL
        .iter()
        .map(|&k| Ok((k, PosteriorTable::read(&eval_dir.join(format!("posteriors_{}.csv", kind_stem(k))))?)))
        .collect::<Result<_>>()?;
    prepare_dir(out, cfg)?;
    let fused = fuse_tables(out, &tables, cfg)?;
    println!("{}", summary_line(&fused));
    Ok(())
}

fn summary_line(f: &Fused) -> String {
    let mut s = String::new();
    for (k, a) in &f.singles {
        let _ = write!(s, "{k} {a:.2}%  ");
    }
    let _ = write!(s, "fused {:.2}%", f.report.accuracy);
    s
}

fn write_cost(dir: &Path, report: &CostReport) -> Result<Vec<rfgest::cost::CostCheck>> {
    write_text(&dir.join("cost.txt"), &report.to_text())?;
    write_text(&dir.join("cost_lines.csv"), &report.lines_csv())?;
    write_text(&dir.join("efficiency.csv"), &report.efficiency_csv())?;
    let checks = published_check(report);
    let mut csv = String::from("check,expected,actual,tolerance,relative,pass\n");
    for c in &checks {
        let _ = writeln!(csv, "{},{},{},{},{},{}", c.name, c.expected, c.actual, c.tolerance, c.relative, c.pass);
    }
    write_text(&dir.join("cost_checks.csv"), &csv)?;
    Ok(checks)
}

pub fn cost(out: Option<&Path>, check: bool) -> Result<()> {
    let report = CostReport::published();
    print!("{}", report.to_text());
    let checks = match out {
        Some(dir) => {
            prepare_dir(dir, &RunConfig::default())?;
            write_cost(dir, &report)?
        }
        None => published_check(&report),
    };
    if check {
        let failed: Vec<_> = checks.iter().filter(|c| !c.pass).collect();
        for c in &checks {
            println!("{} {}: expected {} got {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.expected, c.actual);
        }
        if !failed.is_empty() {
            return Err(CliError::Invariant(format!("{} cost values differ from the published tables", failed.len())));
        }
    }
    Ok(())
}

/// Runs every stage on an existing dataset and checks the invariants; any
/// failed check turns into exit code 3 after all artifacts are written.
pub fn pipeline(dataset: &Path, out: &Path, cfg: &mut RunConfig) -> Result<()> {
    let captures = load_dataset(dataset)?;
    adopt_dataset_config(dataset, cfg)?;
    let cfg = &*cfg;
    prepare_dir(out, cfg)?;
    let sub = |name: &str| -> Result<std::path::PathBuf> {
        let d = out.join(name);
        prepare_dir(&d, cfg)?;
        Ok(d)
    };
    let (aoa_dir, features_dir, models_dir, eval_dir, fused_dir, cost_dir) =
        (sub("aoa")?, sub("features")?, sub("models")?, sub("eval")?, sub("fused")?, sub("cost")?);

    let ids: Vec<&str> = captures.iter().map(capture_id).collect();
    let results = map_all(&captures, cfg.parallel, |c| {
        let t = estimate_tracks(c, &cfg.process)?;
        let frame = build_frame(c, &t.smoothed, &cfg.process.frame)?;
        Ok((t, frame))
    });
    let processed = keep_ok(out, &ids, results)?;
    for (t, frame) in &processed {
        write_tracks(&aoa_dir, &frame.sample_id, t, false)?;
    }
    let frames: Vec<SignalFrame> = processed.into_iter().map(|(_, f)| f).collect();
    write_frames(&out.join("frames.jsonl"), &frames)?;

    let bundles = extract_features(&frames, cfg.parallel)?;
    write_feature_dir(&features_dir, &bundles)?;

    let exclude: HashSet<String> = frames.iter().filter(|f| f.degenerate).map(|f| f.sample_id.clone()).collect();
    let trained = train_split(&bundles, &exclude, cfg)?;
    write_models(&models_dir, &bundles, &trained)?;

    let samples: Vec<&Vec<FeatureVector>> = trained.test.iter().map(|&i| &bundles[i]).collect();
    let tables = posterior_tables(&trained.models, &samples, cfg.parallel)?;
    let reports = write_eval(&eval_dir, &tables)?;
    let fused = fuse_tables(&fused_dir, &tables, cfg)?;
    let cost_checks = write_cost(&cost_dir, &CostReport::published())?;

    let mut checks: Vec<(String, bool)> = Vec::new();
    checks.push(("frames valid".into(), frames.iter().all(|f| f.validate().is_ok())));
    checks.push((
        "feature cardinalities".into(),
        bundles.iter().flatten().all(|f| f.values.len() == f.kind.dim() && f.validate().is_ok()),
    ));
    for (kind, m) in &trained.models {
        let ok = m.training().is_some_and(|t| is_monotone(&t.loglik_history, 1e-6));
        checks.push((format!("EM log-likelihood non-decreasing ({kind})"), ok));
    }
    let normalized = tables.iter().all(|(_, t)| {
        t.probs.iter().all(|p| p.iter().all(|v| v.is_finite() && *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9)
    });
    checks.push(("posteriors sum to 1".into(), normalized));
    let totals = reports
        .iter()
        .map(|(_, r)| r)
        .chain(std::iter::once(&fused.report))
        .all(|r| r.confusion.raw.iter().flatten().sum::<usize>() == r.samples);
    checks.push(("confusion totals".into(), totals));
    checks.push(("cost tables".into(), cost_checks.iter().all(|c| c.pass)));

    let mut text = String::new();
    for (name, ok) in &checks {
        let _ = writeln!(text, "{} {name}", if *ok { "pass" } else { "FAIL" });
    }
    write_text(&out.join("invariants.txt"), &text)?;
    let summary = summary_line(&fused);
    write_text(&out.join("summary.txt"), &format!("{summary}\n"))?;
    println!("{summary}");

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("invariant checks failed: {}", failed.join(", "))))
    }
}
