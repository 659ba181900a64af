use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{log_sum_exp, random_log_weights, EinsumCircuit, NodeParams, TrainingInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub epochs: usize,
    /// Pseudo-count added to every sum weight and class-head entry.
    pub laplace_alpha: f64,
    /// Lower bound on leaf variances, in standardized units.
    pub variance_floor: f64,
    pub init_seed: u64,
    /// Class c starts with this head weight on its home repetition
    /// (c mod R), whose leaves are seeded from that class's samples. 0 gives
    /// uniform heads and class-agnostic seeding.
    pub class_init_weight: f64,
    /// Runs the E-step on rayon. Samples are always reduced in fixed chunks
    /// and in chunk order, so both modes give bit-identical models.
    pub parallel: bool,
    pub chunk_size: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            laplace_alpha: 0.01,
            variance_floor: 1e-3,
            init_seed: 0,
            class_init_weight: 0.9,
            parallel: false,
            chunk_size: 32,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.laplace_alpha >= 0.0 && self.laplace_alpha.is_finite()) {
            return Err(Error::param("laplace_alpha must be finite and >= 0"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::param("variance_floor must be positive"));
        }
        if !(0.0..1.0).contains(&self.class_init_weight) {
            return Err(Error::param("class_init_weight must be in [0, 1)"));
        }
        if self.chunk_size == 0 {
            return Err(Error::param("chunk_size must be >= 1"));
        }
        Ok(())
    }
}

/// Expected sufficient statistics. Leaf blocks hold [s0 (L) | s1 (L×S) | s2 (L×S)],
/// einsum blocks mirror the weight tensor.
#[derive(Clone)]
struct Stats {
    loglik: f64,
    nodes: Vec<Vec<Vec<f64>>>,
    head: Vec<f64>,
}

impl Stats {
    fn zeros(c: &EinsumCircuit) -> Self {
        let l = c.spec.leaf_distributions;
        let nodes = c
            .nodes
            .iter()
            .zip(&c.graph.repetitions)
            .map(|(params, regions)| {
                params
                    .iter()
                    .zip(regions)
                    .map(|(p, region)| match p {
                        NodeParams::Leaf { .. } => vec![0.0; l * (1 + 2 * region.scope.len())],
                        NodeParams::Sum { log_weights, .. } => vec![0.0; log_weights.len()],
                    })
                    .collect()
            })
            .collect();
        Stats { loglik: 0.0, nodes, head: vec![0.0; c.head_log_weights.len()] }
    }

    fn add(&mut self, other: &Stats) {
        self.loglik += other.loglik;
        for (a, b) in self.nodes.iter_mut().zip(&other.nodes) {
            for (x, y) in a.iter_mut().zip(b) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
        }
        for (p, q) in self.head.iter_mut().zip(&other.head) {
            *p += q;
        }
    }
}

/// One sample's bottom-up pass plus top-down flows, accumulated into `stats`.
fn accumulate(c: &EinsumCircuit, z: &[f64], label: usize, stats: &mut Stats, values: &mut [Vec<Vec<f64>>]) {
    let r = c.spec.repetitions;
    for (rep, v) in values.iter_mut().enumerate() {
        c.repetition_values(z, rep, v);
    }
    let joint: Vec<f64> = (0..r)
        .map(|rep| c.head_log_weights[label * r + rep] + values[rep][0][label])
        .collect();
    let ll = log_sum_exp(joint.iter().copied());
    stats.loglik += ll + c.log_jacobian;
    let l_dim = c.spec.leaf_distributions;
    for rep in 0..r {
        let gamma = (joint[rep] - ll).exp();
        stats.head[label * r + rep] += gamma;
        if gamma == 0.0 {
            continue;
        }
        let regions = &c.graph.repetitions[rep];
        let vals = &values[rep];
        let mut flows: Vec<Vec<f64>> = vals.iter().map(|v| vec![0.0; v.len()]).collect();
        flows[0][label] = gamma;
        for i in 0..regions.len() {
            let acc = &mut stats.nodes[rep][i];
            match &c.nodes[rep][i] {
                NodeParams::Sum { shape, .. } => {
                    let [o_dim, a, b] = *shape;
                    let left = regions[i].children[0];
                    let right = regions[i].children.get(1).copied();
                    let u = &vals[left];
                    let zero = [0.0];
                    let v = right.map_or(&zero[..], |rc| &vals[rc][..]);
                    // Responsibility of (o, i, j) is W_oij·e^{u_i}·e^{v_j} / e^{s_o},
                    // evaluated on max-shifted exponentials.
                    let w = &c.weights[rep][i];
                    let mu = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mv = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let eu: Vec<f64> = u.iter().map(|x| (x - mu).exp()).collect();
                    let ev: Vec<f64> = v.iter().map(|x| (x - mv).exp()).collect();
                    let mut fu = vec![0.0; a];
                    let mut fv = vec![0.0; b];
                    for o in 0..o_dim {
                        let f = flows[i][o];
                        if f == 0.0 {
                            continue;
                        }
                        let scale = f * (mu + mv - vals[i][o]).exp();
                        for ii in 0..a {
                            let su = scale * eu[ii];
                            for jj in 0..b {
                                let idx = o * a * b + ii * b + jj;
                                let q = su * w[idx] * ev[jj];
                                acc[idx] += q;
                                fu[ii] += q;
                                fv[jj] += q;
                            }
                        }
                    }
                    for (dst, src) in flows[left].iter_mut().zip(&fu) {
                        *dst += src;
                    }
                    if let Some(rc) = right {
                        for (dst, src) in flows[rc].iter_mut().zip(&fv) {
                            *dst += src;
                        }
                    }
                }
                NodeParams::Leaf { .. } => {
                    let scope = &regions[i].scope;
                    let s = scope.len();
                    for l in 0..l_dim {
                        let f = flows[i][l];
                        if f == 0.0 {
                            continue;
                        }
                        acc[l] += f;
                        for (k, &var) in scope.iter().enumerate() {
                            acc[l_dim + l * s + k] += f * z[var];
                            acc[l_dim + l_dim * s + l * s + k] += f * z[var] * z[var];
                        }
                    }
                }
            }
        }
    }
}

fn e_step(c: &EinsumCircuit, zs: &[Vec<f64>], labels: &[usize], cfg: &EmConfig) -> Stats {
    let chunk = |(xs, ys): (&[Vec<f64>], &[usize])| {
        let mut stats = Stats::zeros(c);
        let mut values = vec![Vec::new(); c.spec.repetitions];
        for (z, &y) in xs.iter().zip(ys) {
            accumulate(c, z, y, &mut stats, &mut values);
        }
        stats
    };
    let pieces: Vec<(&[Vec<f64>], &[usize])> = zs.chunks(cfg.chunk_size).zip(labels.chunks(cfg.chunk_size)).collect();
    let partial: Vec<Stats> = if cfg.parallel {
        pieces.into_par_iter().map(chunk).collect()
    } else {
        pieces.into_iter().map(chunk).collect()
    };
    let mut total = Stats::zeros(c);
    for p in &partial {
        total.add(p);
    }
    total
}

fn m_step(c: &mut EinsumCircuit, stats: &Stats, cfg: &EmConfig) {
    let alpha = cfg.laplace_alpha;
    let l_dim = c.spec.leaf_distributions;
    for rep in 0..c.spec.repetitions {
        for i in 0..c.nodes[rep].len() {
            let acc = &stats.nodes[rep][i];
            let s = c.graph.repetitions[rep][i].scope.len();
            match &mut c.nodes[rep][i] {
                NodeParams::Sum { shape, log_weights } => {
                    let slice = shape[1] * shape[2];
                    for (o, out) in log_weights.chunks_mut(slice).enumerate() {
                        let counts = &acc[o * slice..(o + 1) * slice];
                        let total: f64 = counts.iter().sum::<f64>() + alpha * slice as f64;
                        if total <= 0.0 {
                            continue;
                        }
                        for (w, n) in out.iter_mut().zip(counts) {
                            *w = ((n + alpha) / total).ln();
                        }
                    }
                }
                NodeParams::Leaf { means, variances } => {
                    for l in 0..l_dim {
                        let s0 = acc[l];
                        // Leaves that received no responsibility keep their parameters.
                        if s0 < 1e-12 {
                            continue;
                        }
                        for k in 0..s {
                            let m = acc[l_dim + l * s + k] / s0;
                            let second = acc[l_dim + l_dim * s + l * s + k] / s0;
                            means[l * s + k] = m;
                            variances[l * s + k] = (second - m * m).max(cfg.variance_floor);
                        }
                    }
                }
            }
        }
    }
    let r = c.spec.repetitions;
    for (row_out, row) in c.head_log_weights.chunks_mut(r).zip(stats.head.chunks(r)) {
        let total: f64 = row.iter().sum::<f64>() + alpha * r as f64;
        if total <= 0.0 {
            continue;
        }
        for (w, n) in row_out.iter_mut().zip(row) {
            *w = ((n + alpha) / total).ln();
        }
    }
    c.refresh();
}

fn stats_finite(stats: &Stats) -> bool {
    stats.loglik.is_finite()
        && stats.head.iter().all(|v| v.is_finite())
        && stats.nodes.iter().flatten().flatten().all(|v| v.is_finite())
}

/// Full-batch EM on the class-conditional likelihood.
///
/// Re-initializes the circuit from the data: per-feature standardization
/// from the training set, leaf means at randomly chosen training samples
/// with unit variance, random einsum weights, uniform heads. `labels` are
/// 0-based. Returns the total train log-likelihood before the first update
/// and after every epoch (`epochs + 1` values).
pub fn em_fit(c: &mut EinsumCircuit, features: &[Vec<f64>], labels: &[usize], cfg: &EmConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), actual: labels.len() });
    }
    let classes = c.spec.classes;
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::data(format!("label {} outside 1..={classes}", y + 1)));
        }
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::data(format!("class {} has no training samples", empty + 1)));
    }
    let n_vars = c.spec.num_variables;
    for x in features {
        if x.len() != n_vars {
            return Err(Error::DimensionMismatch { expected: n_vars, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite training feature"));
        }
    }

    let n = features.len() as f64;
    let mean: Vec<f64> = (0..n_vars).map(|v| features.iter().map(|x| x[v]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..n_vars)
        .map(|v| {
            let var = features.iter().map(|x| (x[v] - mean[v]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 { var.sqrt() } else { 1.0 }
        })
        .collect();
    c.set_standardization(mean, std)?;
    let zs: Vec<Vec<f64>> = features.iter().map(|x| c.standardize(x)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let l_dim = c.spec.leaf_distributions;
    let r = c.spec.repetitions;
    let class_aware = cfg.class_init_weight > 0.0 && r > 1;
    for rep in 0..r {
        // Samples whose class calls this repetition home.
        let pool: Vec<usize> = if class_aware {
            (0..zs.len()).filter(|&n| labels[n] % r == rep).collect()
        } else {
            Vec::new()
        };
        let pool: Vec<usize> = if pool.is_empty() { (0..zs.len()).collect() } else { pool };
        for i in 0..c.nodes[rep].len() {
            let scope = c.graph.repetitions[rep][i].scope.clone();
            match &mut c.nodes[rep][i] {
                NodeParams::Leaf { means, variances } => {
                    for l in 0..l_dim {
                        let pick = &zs[pool[rng.random_range(0..pool.len())]];
                        for (k, &v) in scope.iter().enumerate() {
                            means[l * scope.len() + k] = pick[v];
                        }
                    }
                    variances.fill(1.0);
                }
                NodeParams::Sum { shape, log_weights } => {
                    *log_weights = random_log_weights(&mut rng, *shape);
                }
            }
        }
    }
    c.head_log_weights = vec![-(r as f64).ln(); classes * r];
    if class_aware {
        let home = cfg.class_init_weight.ln();
        let away = ((1.0 - cfg.class_init_weight) / (r - 1) as f64).ln();
        for (class, row) in c.head_log_weights.chunks_mut(r).enumerate() {
            for (rep, w) in row.iter_mut().enumerate() {
                *w = if rep == class % r { home } else { away };
            }
        }
    }
    c.training = None;
    c.refresh();

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let stats = e_step(c, &zs, labels, cfg);
        if !stats_finite(&stats) {
            return Err(Error::Numerical(format!("non-finite EM statistics in epoch {}", epoch + 1)));
        }
        history.push(stats.loglik);
        log::debug!("EM epoch {}: train log-likelihood {:.6}", epoch + 1, stats.loglik);
        m_step(c, &stats, cfg);
    }
    let last: f64 = zs
        .iter()
        .zip(labels)
        .map(|(z, &y)| c.loglik_standardized(z).map(|(ll, _)| ll[y]))
        .sum::<Result<f64>>()?;
    history.push(last);
    c.training = Some(TrainingInfo { config: *cfg, loglik_history: history.clone(), num_samples: features.len() });
    Ok(history)
}

/// True when every step of `history` is non-decreasing up to `rel_tol`.
pub fn is_monotone(history: &[f64], rel_tol: f64) -> bool {
    history.windows(2).all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(1.0))
}
