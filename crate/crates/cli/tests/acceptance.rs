//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Run with `cargo test -p rfgest-cli --test acceptance`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfgest::aoa::{estimate_track, AoaConfig};
use rfgest::circuit::{is_monotone, CircuitSpec, EinsumCircuit, NodeParams};
use rfgest::cost::{published_check, CostReport};
use rfgest::features::{dwt_db2_approx, FeatureKind};
use rfgest::pipeline::{run_experiment, DatasetConfig, ExperimentConfig, ExperimentResult, TrainConfig};
use rfgest::preprocess::{gaussian_filter, gaussian_kernel, minmax_normalize, savgol_filter, unwrap_phase};
use rfgest::sim::{synth_capture, ArrayGeometry, SimConfig, TagTrajectory, TrajectoryPoint};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rfgest")
}

fn cost_tables() -> Outcome {
    let t0 = Instant::now();
    let report = CostReport::published();
    let checks = published_check(&report);
    let lib_time = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let status = Command::new(bin()).args(["cost", "--paper-check"]).output().expect("run rfgest cost");
    let cli_time = t0.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let pass = failed.is_empty() && status.status.success() && lib_time < 1.0 && cli_time < 1.0;
    Outcome {
        name: "cost tables",
        pass,
        detail: format!(
            "{}/{} values match, cli exit {:?}, {:.3}s library / {:.3}s cli{}",
            checks.len() - failed.len(),
            checks.len(),
            status.status.code(),
            lib_time,
            cli_time,
            if failed.is_empty() { String::new() } else { format!(", mismatches: {}", failed.join("; ")) }
        ),
    }
}

fn feature_cardinalities(runs: &[ExperimentResult]) -> Outcome {
    let mut bad = 0;
    let mut total = 0;
    for r in runs {
        for bundles in &r.features {
            for f in bundles {
                total += 1;
                let want = match f.kind {
                    FeatureKind::Spr => 116,
                    FeatureKind::Sa => 29,
                    FeatureKind::Wa => 38,
                };
                if f.values.len() != want || f.names.len() != want || f.validate().is_err() {
                    bad += 1;
                }
            }
        }
    }
    let x: Vec<f64> = (0..35).map(|i| (i as f64 * 0.3).sin()).collect();
    let db2 = dwt_db2_approx(&x).map(|v| v.len()).unwrap_or(0);
    Outcome {
        name: "feature cardinalities",
        pass: bad == 0 && total > 0 && db2 == 19,
        detail: format!("{total} bundles checked, {bad} wrong size; db2 length {db2} for 35 inputs"),
    }
}

fn music_accuracy() -> Outcome {
    let t0 = Instant::now();
    let geometry = ArrayGeometry::default();
    let base = SimConfig { nlos_paths: vec![], misdetect_rss_floor_db: -200.0, ..SimConfig::default() };
    // 64 cycles of four slots each at the default read rate.
    let duration = 64.0 * 4.0 / base.reads_per_second;
    let static_tag = |theta: f64| TagTrajectory {
        tag_id: 1,
        samples: vec![
            TrajectoryPoint { time_s: 0.0, azimuth_deg: theta, range_m: 1.0 },
            TrajectoryPoint { time_s: duration, azimuth_deg: theta, range_m: 1.0 },
        ],
    };
    let clean = synth_capture(&[static_tag(0.0)], &geometry, &SimConfig { noise_variance: 0.0, ..base.clone() })
        .expect("noiseless capture");
    let detected: Vec<f64> = clean.reads.iter().filter(|r| r.detected).map(|r| r.iq.norm_sqr()).collect();
    let signal_power = detected.iter().sum::<f64>() / detected.len() as f64;
    let noise_variance = signal_power / 100.0;

    let trials = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let theta = -15.0 + (i % 31) as f64;
        let cfg = SimConfig { noise_variance, rng_seed: rng.random(), ..base.clone() };
        let cap = synth_capture(&[static_tag(theta)], &geometry, &cfg).expect("capture");
        let (track, _) = estimate_track(&cap, 1, &AoaConfig::default()).expect("track");
        let err = if track.valid_mask.first() == Some(&true) { (track.azimuth_deg[0] - theta).abs() } else { f64::INFINITY };
        worst = worst.max(err);
        if err < 0.5 {
            hits += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let rate = hits as f64 / trials as f64;
    Outcome {
        name: "MUSIC accuracy",
        pass: rate >= 0.95 && secs < 30.0,
        detail: format!("{hits}/{trials} within 0.5° at 20 dB ({:.1}%), worst {worst:.3}°, {secs:.2}s", 100.0 * rate),
    }
}

fn gauss_pdf(x: f64, m: f64, var: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Induced trees below region `i`, output `o`, as (weight, [(leaf region, component)]).
fn expand(c: &EinsumCircuit, rep: usize, i: usize, o: usize) -> Vec<(f64, Vec<(usize, usize)>)> {
    match c.node(rep, i) {
        NodeParams::Leaf { .. } => vec![(1.0, vec![(i, o)])],
        NodeParams::Sum { shape, log_weights } => {
            let [_, a, b] = *shape;
            let children = &c.graph().repetitions[rep][i].children;
            let mut terms = Vec::new();
            for ii in 0..a {
                for jj in 0..b {
                    let w = log_weights[o * a * b + ii * b + jj].exp();
                    let left = expand(c, rep, children[0], ii);
                    let right = match children.get(1) {
                        Some(&ch) => expand(c, rep, ch, jj),
                        None => vec![(1.0, vec![])],
                    };
                    for (wl, sl) in &left {
                        for (wr, sr) in &right {
                            let mut sel = sl.clone();
                            sel.extend(sr);
                            terms.push((w * wl * wr, sel));
                        }
                    }
                }
            }
            terms
        }
    }
}

fn brute_force(c: &EinsumCircuit, x: &[f64]) -> Vec<f64> {
    let (mean, std) = c.standardization();
    let z: Vec<f64> = x.iter().zip(mean.iter().zip(std)).map(|(v, (m, s))| (v - m) / s).collect();
    let jac: f64 = std.iter().product();
    let head = c.head_weights();
    let r = c.spec().repetitions;
    (0..c.spec().classes)
        .map(|class| {
            let mut total = 0.0;
            for rep in 0..r {
                for (w, sel) in expand(c, rep, 0, class) {
                    let mut dens = w;
                    for (node, l) in sel {
                        let scope = &c.graph().repetitions[rep][node].scope;
                        if let NodeParams::Leaf { means, variances } = c.node(rep, node) {
                            for (k, &v) in scope.iter().enumerate() {
                                dens *= gauss_pdf(z[v], means[l * scope.len() + k], variances[l * scope.len() + k]);
                            }
                        }
                    }
                    total += head[class * r + rep] * dens;
                }
            }
            (total / jac).ln()
        })
        .collect()
}

fn random_circuit(vars: usize, depth: usize, k: usize, l: usize, r: usize, classes: usize, seed: u64) -> EinsumCircuit {
    let spec = CircuitSpec {
        depth,
        sum_components: k,
        leaf_distributions: l,
        repetitions: r,
        classes,
        num_variables: vars,
        structure_seed: seed,
    };
    let mut c = EinsumCircuit::new(spec).expect("circuit");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for rep in 0..r {
        for i in 0..c.graph().repetitions[rep].len() {
            match c.node(rep, i).clone() {
                NodeParams::Leaf { means, .. } => {
                    let m = (0..means.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
                    let v = (0..means.len()).map(|_| rng.random_range(0.3..2.0)).collect();
                    c.set_leaf(rep, i, m, v).expect("leaf");
                }
                NodeParams::Sum { log_weights, .. } => {
                    let w: Vec<f64> = (0..log_weights.len()).map(|_| rng.random_range(0.05..1.0)).collect();
                    c.set_sum_weights(rep, i, &w).expect("sum");
                }
            }
        }
    }
    let h: Vec<f64> = (0..classes * r).map(|_| rng.random_range(0.05..1.0)).collect();
    c.set_head_weights(&h).expect("head");
    let mean = (0..vars).map(|_| rng.random_range(-1.0..1.0)).collect();
    let std = (0..vars).map(|_| rng.random_range(0.5..2.0)).collect();
    c.set_standardization(mean, std).expect("standardization");
    c
}

fn einsum_circuit(runs: &[ExperimentResult]) -> Outcome {
    // EM monotonicity: every model of every seeded run, 50 epochs each.
    let mut histories = 0;
    let mut non_monotone = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        for (kind, m) in &r.models {
            let h = &m.training().expect("trained").loglik_history;
            histories += 1;
            if h.len() != 51 || !is_monotone(h, 1e-6) {
                non_monotone.push(format!("seed {seed} {kind}"));
            }
        }
    }

    // Forward pass against exhaustive expansion.
    let cases = [(2, 1, 2, 3, 2, 3), (4, 2, 2, 2, 2, 3), (5, 3, 2, 2, 2, 2), (6, 2, 3, 3, 2, 2), (6, 3, 2, 2, 3, 4), (3, 2, 3, 2, 1, 2)];
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (n, &(vars, d, k, l, r, classes)) in cases.iter().enumerate() {
        let c = random_circuit(vars, d, k, l, r, classes, n as u64 + 1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..vars).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = c.class_loglik(&x).expect("loglik");
            for (g, w) in got.iter().zip(brute_force(&c, &x)) {
                worst = worst.max((g - w).abs());
            }
            let p = c.posterior_uniform(&x).expect("posterior");
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        }
    }
    // Posteriors of the trained models on their test samples.
    for r in runs {
        for &i in &r.test {
            for (k, (_, m)) in r.models.iter().enumerate() {
                let p = m.posterior_uniform(&r.features[i][k].values).expect("posterior");
                worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    Outcome {
        name: "Einsum circuit",
        pass: non_monotone.is_empty() && histories == 15 && worst <= 1e-9 && worst_sum <= 1e-12,
        detail: format!(
            "{}/{histories} EM runs monotone over 50 epochs{}; brute-force max |Δ log p| {worst:.2e}; max |Σp − 1| {worst_sum:.2e}",
            histories - non_monotone.len(),
            if non_monotone.is_empty() { String::new() } else { format!(" (violations: {})", non_monotone.join(", ")) }
        ),
    }
}

fn fusion_dominance(runs: &[ExperimentResult]) -> Outcome {
    let mut lines = Vec::new();
    let (mut fused_sum, mut best_sum, mut min_fused) = (0.0, 0.0, f64::INFINITY);
    for (seed, r) in runs.iter().enumerate() {
        let e = &r.evaluation;
        let singles: Vec<String> = e.per_model.iter().map(|(k, rep)| format!("{k} {:.2}", rep.accuracy)).collect();
        lines.push(format!("seed {seed}: {} fused {:.2}", singles.join(" "), e.fused.accuracy));
        fused_sum += e.fused.accuracy;
        best_sum += e.best_single_accuracy();
        min_fused = min_fused.min(e.fused.accuracy);
    }
    let n = runs.len() as f64;
    let (fused, best) = (fused_sum / n, best_sum / n);
    Outcome {
        name: "fusion dominance",
        pass: fused >= best && fused >= 85.0 && min_fused >= 85.0,
        detail: format!(
            "mean fused {fused:.2}% vs mean best single {best:.2}%, lowest fused {min_fused:.2}%\n      {}",
            lines.join("\n      ")
        ),
    }
}

fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let (mut sg_err, mut gauss_err, mut unwrap_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let n = rng.random_range(12..80);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y = minmax_normalize(&x).expect("minmax");
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo != 0.0 || hi != 1.0 {
            failures.push(format!("minmax spans [{lo}, {hi}]"));
        }

        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let cubic: Vec<f64> = (0..n).map(|i| {
            let t = i as f64 / 10.0;
            c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t
        }).collect();
        let s = savgol_filter(&cubic, 11, 3).expect("savgol");
        for (a, b) in s.iter().zip(&cubic) {
            sg_err = sg_err.max((a - b).abs());
        }

        let k = rng.random_range(-100.0..100.0);
        let sigma = rng.random_range(0.5..4.0);
        for v in gaussian_filter(&vec![k; n], sigma).expect("gaussian") {
            gauss_err = gauss_err.max((v - k).abs());
        }
        let kernel_sum: f64 = gaussian_kernel(sigma).expect("kernel").iter().sum();
        gauss_err = gauss_err.max((kernel_sum - 1.0).abs());

        // Smooth ramp: every per-sample step |slope + curve·(2i+1)| stays below 3 < π.
        let start = rng.random_range(-PI..PI);
        let slope = rng.random_range(-2.0..2.0);
        let curve = rng.random_range(-0.9..0.9) / (2 * n) as f64;
        let ramp: Vec<f64> = (0..n).map(|i| start + slope * i as f64 + curve * (i * i) as f64).collect();
        let wrapped: Vec<f64> = ramp.iter().map(|v| (v + PI).rem_euclid(2.0 * PI) - PI).collect();
        for (a, b) in unwrap_phase(&wrapped).iter().zip(&ramp) {
            unwrap_err = unwrap_err.max((a - b).abs());
        }
    }
    if sg_err > 1e-9 {
        failures.push(format!("Savitzky-Golay cubic error {sg_err:.2e}"));
    }
    if gauss_err > 1e-12 {
        failures.push(format!("Gaussian constant error {gauss_err:.2e}"));
    }
    if unwrap_err > 1e-9 {
        failures.push(format!("unwrap error {unwrap_err:.2e}"));
    }
    failures.dedup();
    Outcome {
        name: "preprocessing properties",
        pass: failures.is_empty(),
        detail: format!(
            "200 random cases: minmax exact; S-G cubic {sg_err:.1e}; Gaussian constant {gauss_err:.1e}; unwrap∘wrap {unwrap_err:.1e}{}",
            if failures.is_empty() { String::new() } else { format!(" ({})", failures.join("; ")) }
        ),
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("prefix").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let run = |args: &[&str]| Command::new(bin()).args(args).env("RUST_LOG", "error").output().expect("run rfgest");
    let ds = root.join("ds");
    let sim = run(&["simulate", "--out", ds.to_str().unwrap(), "--classes", "6", "--samples-per-class", "10", "--seed", "11"]);
    let mut codes = vec![sim.status.code()];
    for out in ["a", "b"] {
        let o = root.join(out);
        let r = run(&["pipeline", "--dataset", ds.to_str().unwrap(), "--out", o.to_str().unwrap(), "--deterministic", "--split-seed", "3"]);
        codes.push(r.status.code());
    }
    let (a, b) = (root.join("a"), root.join("b"));
    let files = if a.is_dir() { files_under(&a) } else { Vec::new() };
    let same_list = b.is_dir() && files == files_under(&b);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let has = |f: &str| files.iter().any(|p| p == Path::new(f));
    let artifacts = ["models/spr.json", "models/sa.json", "models/wa.json", "fused/report_fused.txt", "eval/metrics.json"]
        .iter()
        .all(|f| has(f));
    Outcome {
        name: "determinism",
        pass: codes.iter().all(|c| *c == Some(0)) && same_list && artifacts && differing.is_empty(),
        detail: format!(
            "2 deterministic pipeline runs (6 classes × 10): {} files, {} differ, exit codes {:?}",
            files.len(),
            differing.len(),
            codes
        ),
    }
}

fn main() {
    // `cargo test` passes harness flags; listing must not run the gate.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let t0 = Instant::now();
    let mut outcomes = vec![cost_tables(), music_accuracy(), preprocessing()];

    let runs: Vec<ExperimentResult> = (0..5u64)
        .map(|seed| {
            let cfg = ExperimentConfig {
                dataset: DatasetConfig { seed, ..DatasetConfig::default() },
                train: TrainConfig { structure_seed: seed, ..TrainConfig::default() },
                split_seed: seed,
                ..ExperimentConfig::default()
            };
            let mut cfg = cfg;
            cfg.train.em.init_seed = seed;
            run_experiment(&cfg).expect("experiment")
        })
        .collect();
    outcomes.push(feature_cardinalities(&runs));
    outcomes.push(einsum_circuit(&runs));
    outcomes.push(fusion_dominance(&runs));
    outcomes.push(determinism());

    println!();
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("\nacceptance: {}/{} criteria pass ({:.0}s)", outcomes.len() - failed, outcomes.len(), t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
