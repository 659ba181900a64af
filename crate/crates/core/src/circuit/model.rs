use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::EmConfig;
use super::graph::{build_region_graph, RegionGraph};
use crate::error::{Error, Result};
use crate::features::FeatureKind;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

const MODEL_FORMAT: &str = "rfgest-einsum v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub depth: usize,
    pub sum_components: usize,
    pub leaf_distributions: usize,
    pub repetitions: usize,
    pub classes: usize,
    pub num_variables: usize,
    pub structure_seed: u64,
}

impl CircuitSpec {
    /// Default (D, K, L, R, C) per device: SPR (6,2,10,10,21), SA (4,...), WA (5,...).
    pub fn for_kind(kind: FeatureKind, classes: usize, structure_seed: u64) -> Self {
        let depth = match kind {
            FeatureKind::Spr => 6,
            FeatureKind::Sa => 4,
            FeatureKind::Wa => 5,
        };
        Self {
            depth,
            sum_components: 2,
            leaf_distributions: 10,
            repetitions: 10,
            classes,
            num_variables: kind.dim(),
            structure_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.depth, self.sum_components, self.leaf_distributions, self.repetitions, self.classes];
        if dims.contains(&0) || self.num_variables == 0 {
            return Err(Error::param(format!("circuit dimensions must all be >= 1, got {self:?}")));
        }
        if self.depth > 20 {
            return Err(Error::param("circuit depth above 20 is not supported"));
        }
        Ok(())
    }
}

/// Parameters of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NodeParams {
    /// L diagonal Gaussians over the region scope, row-major by component,
    /// in standardized units.
    Leaf { means: Vec<f64>, variances: Vec<f64> },
    /// W[o][i][j] stored as log-weights, normalized over (i, j) for each o.
    Sum { shape: [usize; 3], log_weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub config: EmConfig,
    /// Total train log-likelihood before the first update and after each epoch.
    pub loglik_history: Vec<f64>,
    pub num_samples: usize,
}

/// Plain on-disk form of a circuit.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    spec: CircuitSpec,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    graph: RegionGraph,
    nodes: Vec<Vec<NodeParams>>,
    /// C × R, rows normalized.
    head_log_weights: Vec<f64>,
    training: Option<TrainingInfo>,
}

/// Einsum network with C class heads mixing R repetitions.
///
/// Leaf regions output L log-densities, inner regions K, the root of each
/// repetition C (one per class). Class c's likelihood is
/// Σ_r head[c,r] · root_r[c], evaluated in raw feature space (the
/// standardization Jacobian is included).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct EinsumCircuit {
    pub(crate) spec: CircuitSpec,
    pub(crate) graph: RegionGraph,
    pub(crate) nodes: Vec<Vec<NodeParams>>,
    pub(crate) head_log_weights: Vec<f64>,
    pub(crate) feature_mean: Vec<f64>,
    pub(crate) feature_std: Vec<f64>,
    pub(crate) training: Option<TrainingInfo>,
    // Derived: probability-space weights and the log-Jacobian.
    pub(crate) weights: Vec<Vec<Vec<f64>>>,
    pub(crate) log_jacobian: f64,
}

impl From<EinsumCircuit> for ModelFile {
    fn from(c: EinsumCircuit) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            spec: c.spec,
            feature_mean: c.feature_mean,
            feature_std: c.feature_std,
            graph: c.graph,
            nodes: c.nodes,
            head_log_weights: c.head_log_weights,
            training: c.training,
        }
    }
}

impl TryFrom<ModelFile> for EinsumCircuit {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(Error::data(format!("unsupported model format {:?}", f.format)));
        }
        let mut c = EinsumCircuit {
            spec: f.spec,
            graph: f.graph,
            nodes: f.nodes,
            head_log_weights: f.head_log_weights,
            feature_mean: f.feature_mean,
            feature_std: f.feature_std,
            training: f.training,
            weights: vec![],
            log_jacobian: 0.0,
        };
        c.check_consistency()?;
        c.refresh();
        Ok(c)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Bayes rule in log space; the result sums to one.
pub fn posterior_from_loglik(loglik: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    if loglik.len() != priors.len() {
        return Err(Error::DimensionMismatch { expected: loglik.len(), actual: priors.len() });
    }
    let total: f64 = priors.iter().sum();
    if priors.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::param("priors must be a probability vector"));
    }
    let joint: Vec<f64> = loglik.iter().zip(priors).map(|(l, p)| l + p.ln()).collect();
    if joint.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN class log-likelihood".into()));
    }
    let norm = log_sum_exp(joint.iter().copied());
    if norm == f64::NEG_INFINITY {
        return Err(Error::Numerical("every class has zero likelihood".into()));
    }
    Ok(joint.iter().map(|j| (j - norm).exp()).collect())
}

fn normalized_log(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::param("weights must be positive and finite"));
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| (w / total).ln()).collect())
}

impl EinsumCircuit {
    /// Fresh circuit: random region graph and random weights drawn from the
    /// structure seed, standard-normal leaves, uniform heads, identity
    /// standardization.
    pub fn new(spec: CircuitSpec) -> Result<Self> {
        spec.validate()?;
        let graph = build_region_graph(spec.num_variables, spec.depth, spec.repetitions, spec.structure_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.structure_seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut nodes = Vec::with_capacity(spec.repetitions);
        for regions in &graph.repetitions {
            let dims: Vec<usize> = (0..regions.len())
                .map(|i| Self::output_dim_of(&spec, regions, i))
                .collect();
            let rep = regions
                .iter()
                .enumerate()
                .map(|(i, region)| {
                    if region.is_leaf() {
                        let n = spec.leaf_distributions * region.scope.len();
                        NodeParams::Leaf { means: vec![0.0; n], variances: vec![1.0; n] }
                    } else {
                        let a = dims[region.children[0]];
                        let b = region.children.get(1).map_or(1, |&c| dims[c]);
                        let shape = [dims[i], a, b];
                        NodeParams::Sum { shape, log_weights: random_log_weights(&mut rng, shape) }
                    }
                })
                .collect();
            nodes.push(rep);
        }
        let r = spec.repetitions;
        let mut c = EinsumCircuit {
            spec,
            graph,
            nodes,
            head_log_weights: vec![-(r as f64).ln(); spec.classes * r],
            feature_mean: vec![0.0; spec.num_variables],
            feature_std: vec![1.0; spec.num_variables],
            training: None,
            weights: vec![],
            log_jacobian: 0.0,
        };
        c.refresh();
        Ok(c)
    }

    fn output_dim_of(spec: &CircuitSpec, regions: &[super::graph::Region], i: usize) -> usize {
        if i == 0 {
            spec.classes
        } else if regions[i].is_leaf() {
            spec.leaf_distributions
        } else {
            spec.sum_components
        }
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn node(&self, rep: usize, region: usize) -> &NodeParams {
        &self.nodes[rep][region]
    }

    pub fn training(&self) -> Option<&TrainingInfo> {
        self.training.as_ref()
    }

    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.feature_mean, &self.feature_std)
    }

    /// C × R head weights in probability space.
    pub fn head_weights(&self) -> Vec<f64> {
        self.head_log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Rebuilds the cached probability-space weights after a parameter change.
    pub(crate) fn refresh(&mut self) {
        self.weights = self
            .nodes
            .iter()
            .map(|rep| {
                rep.iter()
                    .map(|n| match n {
                        NodeParams::Sum { log_weights, .. } => log_weights.iter().map(|w| w.exp()).collect(),
                        NodeParams::Leaf { .. } => Vec::new(),
                    })
                    .collect()
            })
            .collect();
        self.log_jacobian = -self.feature_std.iter().map(|s| s.ln()).sum::<f64>();
    }

    fn check_consistency(&self) -> Result<()> {
        self.spec.validate()?;
        self.graph.validate()?;
        let s = &self.spec;
        let bad = |m: &str| Err(Error::data(format!("inconsistent circuit: {m}")));
        if self.graph.num_variables != s.num_variables
            || self.graph.depth != s.depth
            || self.graph.num_repetitions() != s.repetitions
            || self.nodes.len() != s.repetitions
        {
            return bad("circuit shape and region graph disagree");
        }
        if self.feature_mean.len() != s.num_variables || self.feature_std.len() != s.num_variables {
            return bad("standardization length");
        }
        if self.feature_std.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.feature_mean.iter().any(|v| !v.is_finite()) {
            return bad("standardization values");
        }
        if self.head_log_weights.len() != s.classes * s.repetitions {
            return bad("head shape");
        }
        for row in self.head_log_weights.chunks(s.repetitions) {
            if (log_sum_exp(row.iter().copied())).abs() > 1e-9 {
                return bad("head row not normalized");
            }
        }
        for (regions, params) in self.graph.repetitions.iter().zip(&self.nodes) {
            if regions.len() != params.len() {
                return bad("node count");
            }
            for (i, (region, p)) in regions.iter().zip(params).enumerate() {
                match p {
                    NodeParams::Leaf { means, variances } => {
                        let n = s.leaf_distributions * region.scope.len();
                        if !region.is_leaf() || means.len() != n || variances.len() != n {
                            return bad("leaf parameter shape");
                        }
                        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) || means.iter().any(|m| !m.is_finite()) {
                            return bad("leaf parameter values");
                        }
                    }
                    NodeParams::Sum { shape, log_weights } => {
                        if region.is_leaf() {
                            return bad("sum parameters on a leaf region");
                        }
                        let dim = |j: usize| Self::output_dim_of(s, regions, j);
                        let b = region.children.get(1).map_or(1, |&c| dim(c));
                        if *shape != [dim(i), dim(region.children[0]), b] || log_weights.len() != shape.iter().product::<usize>() {
                            return bad("einsum weight shape");
                        }
                        for slice in log_weights.chunks(shape[1] * shape[2]) {
                            if log_sum_exp(slice.iter().copied()).abs() > 1e-9 {
                                return bad("einsum weight slice not normalized");
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn set_standardization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        let n = self.spec.num_variables;
        if mean.len() != n || std.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: mean.len().min(std.len()) });
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::param("standardization needs finite means and positive scales"));
        }
        self.feature_mean = mean;
        self.feature_std = std;
        self.refresh();
        Ok(())
    }

    /// Sets one einsum tensor from positive weights; each output slice is renormalized.
    pub fn set_sum_weights(&mut self, rep: usize, region: usize, weights: &[f64]) -> Result<()> {
        let Some(NodeParams::Sum { shape, log_weights }) = self.nodes.get_mut(rep).and_then(|r| r.get_mut(region)) else {
            return Err(Error::param(format!("region {region} of repetition {rep} is not an einsum")));
        };
        if weights.len() != log_weights.len() {
            return Err(Error::DimensionMismatch { expected: log_weights.len(), actual: weights.len() });
        }
        let slice = shape[1] * shape[2];
        let mut out = Vec::with_capacity(weights.len());
        for chunk in weights.chunks(slice) {
            out.extend(normalized_log(chunk)?);
        }
        *log_weights = out;
        self.refresh();
        Ok(())
    }

    pub fn set_leaf(&mut self, rep: usize, region: usize, means: Vec<f64>, variances: Vec<f64>) -> Result<()> {
        let Some(NodeParams::Leaf { means: m, variances: v }) = self.nodes.get_mut(rep).and_then(|r| r.get_mut(region)) else {
            return Err(Error::param(format!("region {region} of repetition {rep} is not a leaf")));
        };
        if means.len() != m.len() || variances.len() != v.len() {
            return Err(Error::DimensionMismatch { expected: m.len(), actual: means.len() });
        }
        if variances.iter().any(|x| !(x.is_finite() && *x > 0.0)) || means.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("leaf means must be finite and variances positive"));
        }
        *m = means;
        *v = variances;
        Ok(())
    }

    /// C × R positive weights; rows are renormalized.
    pub fn set_head_weights(&mut self, weights: &[f64]) -> Result<()> {
        let r = self.spec.repetitions;
        if weights.len() != self.spec.classes * r {
            return Err(Error::DimensionMismatch { expected: self.spec.classes * r, actual: weights.len() });
        }
        let mut out = Vec::with_capacity(weights.len());
        for row in weights.chunks(r) {
            out.extend(normalized_log(row)?);
        }
        self.head_log_weights = out;
        Ok(())
    }

    pub(crate) fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.num_variables {
            return Err(Error::DimensionMismatch { expected: self.spec.num_variables, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite circuit input"));
        }
        Ok(x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    /// Log output vectors of every region of one repetition, bottom-up.
    /// Returns the number of einsum contractions performed.
    pub(crate) fn repetition_values(&self, z: &[f64], rep: usize, values: &mut Vec<Vec<f64>>) -> usize {
        let regions = &self.graph.repetitions[rep];
        values.clear();
        values.resize(regions.len(), Vec::new());
        let mut contractions = 0;
        let empty = [0.0];
        for i in (0..regions.len()).rev() {
            let out = match &self.nodes[rep][i] {
                NodeParams::Leaf { means, variances } => {
                    leaf_logdensity(z, &regions[i].scope, means, variances, self.spec.leaf_distributions)
                }
                NodeParams::Sum { shape, .. } => {
                    let u = &values[regions[i].children[0]];
                    let v = regions[i].children.get(1).map_or(&empty[..], |&c| &values[c][..]);
                    contractions += 2;
                    einsum_log(&self.weights[rep][i], *shape, u, v)
                }
            };
            values[i] = out;
        }
        contractions
    }

    /// log p(x | c) for every class.
    pub fn class_loglik(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.class_loglik_counted(x)?.0)
    }

    /// Like `class_loglik`, also returning the einsum contractions executed
    /// (summed over repetitions).
    pub fn class_loglik_counted(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        let z = self.standardize(x)?;
        self.loglik_standardized(&z)
    }

    pub(crate) fn loglik_standardized(&self, z: &[f64]) -> Result<(Vec<f64>, usize)> {
        let (c, r) = (self.spec.classes, self.spec.repetitions);
        let mut roots = Vec::with_capacity(r);
        let mut values = Vec::new();
        let mut contractions = 0;
        for rep in 0..r {
            contractions += self.repetition_values(z, rep, &mut values);
            roots.push(std::mem::take(&mut values[0]));
        }
        let ll: Vec<f64> = (0..c)
            .map(|class| {
                let terms = (0..r).map(|rep| self.head_log_weights[class * r + rep] + roots[rep][class]);
                log_sum_exp(terms) + self.log_jacobian
            })
            .collect();
        if ll.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite class log-likelihood".into()));
        }
        Ok((ll, contractions))
    }

    /// Batch inference; results are identical whether or not `parallel` is set.
    pub fn class_loglik_batch(&self, xs: &[Vec<f64>], parallel: bool) -> Result<Vec<Vec<f64>>> {
        if parallel {
            xs.par_iter().map(|x| self.class_loglik(x)).collect()
        } else {
            xs.iter().map(|x| self.class_loglik(x)).collect()
        }
    }

    pub fn posterior(&self, x: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
        posterior_from_loglik(&self.class_loglik(x)?, priors)
    }

    /// Posterior under uniform priors.
    pub fn posterior_uniform(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.spec.classes;
        self.posterior(x, &vec![1.0 / c as f64; c])
    }

    /// 0-based class with the highest likelihood, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(&self.class_loglik(x)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub(crate) fn random_log_weights(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Vec<f64> {
    let slice = shape[1] * shape[2];
    let mut out = Vec::with_capacity(shape[0] * slice);
    for _ in 0..shape[0] {
        let w: Vec<f64> = (0..slice).map(|_| rng.random_range(0.5..1.5)).collect();
        out.extend(normalized_log(&w).expect("positive weights"));
    }
    out
}

/// log N(z_scope; μ_l, diag σ²_l) for each component l.
pub(crate) fn leaf_logdensity(z: &[f64], scope: &[usize], means: &[f64], variances: &[f64], components: usize) -> Vec<f64> {
    let s = scope.len();
    (0..components)
        .map(|l| {
            scope
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let (m, var) = (means[l * s + k], variances[l * s + k]);
                    let d = z[v] - m;
                    -HALF_LN_2PI - 0.5 * var.ln() - 0.5 * d * d / var
                })
                .sum()
        })
        .collect()
}

/// S_o = log Σ_ij W_oij exp(u_i + v_j), done as two contractions on
/// max-shifted exponentials.
pub(crate) fn einsum_log(w: &[f64], shape: [usize; 3], u: &[f64], v: &[f64]) -> Vec<f64> {
    let [o_dim, a, b] = shape;
    let mu = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mv = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mu == f64::NEG_INFINITY || mv == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; o_dim];
    }
    let eu: Vec<f64> = u.iter().map(|x| (x - mu).exp()).collect();
    let ev: Vec<f64> = v.iter().map(|x| (x - mv).exp()).collect();
    (0..o_dim)
        .map(|o| {
            let slab = &w[o * a * b..(o + 1) * a * b];
            let t: f64 = (0..a)
                .map(|i| eu[i] * slab[i * b..(i + 1) * b].iter().zip(&ev).map(|(w, e)| w * e).sum::<f64>())
                .sum();
            mu + mv + t.ln()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(vars: usize, depth: usize, k: usize, l: usize, r: usize, c: usize, seed: u64) -> CircuitSpec {
        CircuitSpec {
            depth,
            sum_components: k,
            leaf_distributions: l,
            repetitions: r,
            classes: c,
            num_variables: vars,
            structure_seed: seed,
        }
    }

    /// Random parameters everywhere, so tests do not depend on the defaults.
    fn randomize(c: &mut EinsumCircuit, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for rep in 0..c.spec.repetitions {
            for i in 0..c.nodes[rep].len() {
                match c.nodes[rep][i].clone() {
                    NodeParams::Leaf { means, .. } => {
                        let m = (0..means.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
                        let v = (0..means.len()).map(|_| rng.random_range(0.3..2.0)).collect();
                        c.set_leaf(rep, i, m, v).unwrap();
                    }
                    NodeParams::Sum { log_weights, .. } => {
                        let w: Vec<f64> = (0..log_weights.len()).map(|_| rng.random_range(0.05..1.0)).collect();
                        c.set_sum_weights(rep, i, &w).unwrap();
                    }
                }
            }
        }
        let h: Vec<f64> = (0..c.head_log_weights.len()).map(|_| rng.random_range(0.05..1.0)).collect();
        c.set_head_weights(&h).unwrap();
    }

    fn gauss_pdf(x: f64, m: f64, var: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    /// Every induced tree of region `i`, output `o`: (weight product, chosen leaf components).
    fn expand(c: &EinsumCircuit, rep: usize, i: usize, o: usize) -> Vec<(f64, Vec<(usize, usize)>)> {
        let region = &c.graph.repetitions[rep][i];
        match &c.nodes[rep][i] {
            NodeParams::Leaf { .. } => vec![(1.0, vec![(i, o)])],
            NodeParams::Sum { shape, log_weights } => {
                let [_, a, b] = *shape;
                let mut terms = Vec::new();
                for ii in 0..a {
                    for jj in 0..b {
                        let w = log_weights[o * a * b + ii * b + jj].exp();
                        let left = expand(c, rep, region.children[0], ii);
                        let right = match region.children.get(1) {
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
        let z: Vec<f64> = x.iter().zip(c.feature_mean.iter().zip(&c.feature_std)).map(|(v, (m, s))| (v - m) / s).collect();
        let jac: f64 = c.feature_std.iter().product();
        let r = c.spec.repetitions;
        (0..c.spec.classes)
            .map(|class| {
                let mut total = 0.0;
                for rep in 0..r {
                    let head = c.head_log_weights[class * r + rep].exp();
                    for (w, sel) in expand(c, rep, 0, class) {
                        let mut dens = w;
                        for (node, l) in sel {
                            let scope = &c.graph.repetitions[rep][node].scope;
                            if let NodeParams::Leaf { means, variances } = &c.nodes[rep][node] {
                                for (k, &v) in scope.iter().enumerate() {
                                    let idx = l * scope.len() + k;
                                    dens *= gauss_pdf(z[v], means[idx], variances[idx]);
                                }
                            }
                        }
                        total += head * dens;
                    }
                }
                (total / jac).ln()
            })
            .collect()
    }

    #[test]
    fn single_leaf_at_its_mean() {
        let mut c = EinsumCircuit::new(spec(1, 1, 1, 1, 1, 1, 0)).unwrap();
        c.set_standardization(vec![3.0], vec![2.0]).unwrap();
        let ll = c.class_loglik(&[3.0]).unwrap();
        assert!((ll[0] - (-HALF_LN_2PI - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_expansion() {
        let cases = [(4, 2, 2, 2, 1, 2), (4, 2, 2, 2, 2, 3), (6, 2, 3, 3, 2, 2), (5, 3, 2, 2, 2, 2), (3, 1, 3, 2, 3, 2), (1, 1, 2, 3, 2, 2)];
        for (n, (vars, d, k, l, r, classes)) in cases.into_iter().enumerate() {
            let mut c = EinsumCircuit::new(spec(vars, d, k, l, r, classes, n as u64)).unwrap();
            randomize(&mut c, 100 + n as u64);
            c.set_standardization(vec![0.3; vars], vec![1.7; vars]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            for _ in 0..10 {
                let x: Vec<f64> = (0..vars).map(|_| rng.random_range(-3.0..3.0)).collect();
                let got = c.class_loglik(&x).unwrap();
                let want = brute_force(&c, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-9, "case {n}: {g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let mut c = EinsumCircuit::new(spec(2, 1, 2, 3, 2, 2, 5)).unwrap();
        randomize(&mut c, 9);
        c.set_standardization(vec![1.0, -2.0], vec![0.5, 2.0]).unwrap();
        let n = 400;
        let (lo0, hi0) = (1.0 - 0.5 * 9.0, 1.0 + 0.5 * 9.0);
        let (lo1, hi1) = (-2.0 - 2.0 * 9.0, -2.0 + 2.0 * 9.0);
        let (h0, h1) = ((hi0 - lo0) / n as f64, (hi1 - lo1) / n as f64);
        let mut mass = [0.0; 2];
        for a in 0..n {
            for b in 0..n {
                let x = [lo0 + (a as f64 + 0.5) * h0, lo1 + (b as f64 + 0.5) * h1];
                let ll = c.class_loglik(&x).unwrap();
                for (m, l) in mass.iter_mut().zip(&ll) {
                    *m += l.exp() * h0 * h1;
                }
            }
        }
        for m in mass {
            assert!((m - 1.0).abs() < 1e-2, "mass {m}");
        }
    }

    #[test]
    fn contraction_count_per_repetition() {
        for d in 1..=6 {
            let c = EinsumCircuit::new(spec(116, d, 2, 3, 2, 3, 1)).unwrap();
            let (_, count) = c.class_loglik_counted(&vec![0.1; 116]).unwrap();
            assert_eq!(count / 2, (1 << (d + 1)) - 2);
        }
        let c = EinsumCircuit::new(spec(3, 3, 2, 2, 1, 2, 1)).unwrap();
        let (_, count) = c.class_loglik_counted(&[0.0; 3]).unwrap();
        let early = c.graph.early_stopped(0);
        assert!(early > 0);
        assert_eq!(count, 2 * c.graph.internal_count(0));
        assert!(count < (1 << 4) - 2);
    }

    #[test]
    fn posterior_examples() {
        let p = posterior_from_loglik(&[-3.0, -3.0, -3.0], &[1.0 / 3.0; 3]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = posterior_from_loglik(&[50.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-20 && p[1] < 1e-20);
        assert!(posterior_from_loglik(&[f64::NEG_INFINITY; 2], &[0.5, 0.5]).is_err());
        assert!(posterior_from_loglik(&[0.0; 2], &[0.7, 0.7]).is_err());
    }

    #[test]
    fn two_class_posterior_by_hand() {
        // One leaf per class in effect: repetition root mixes a single Gaussian.
        let mut c = EinsumCircuit::new(spec(1, 1, 1, 1, 1, 2, 0)).unwrap();
        c.set_leaf(0, 1, vec![1.0], vec![1.0]).unwrap();
        let x = 0.4;
        let ll = c.class_loglik(&[x]).unwrap();
        // Both classes share the leaf, so the posterior follows the priors.
        let p = posterior_from_loglik(&ll, &[0.25, 0.75]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);

        let mut c = EinsumCircuit::new(spec(1, 1, 1, 2, 1, 2, 0)).unwrap();
        c.set_leaf(0, 1, vec![-1.0, 2.0], vec![1.0, 0.5]).unwrap();
        c.set_sum_weights(0, 0, &[1.0, 1e-12, 1e-12, 1.0]).unwrap();
        let ll = c.class_loglik(&[x]).unwrap();
        let (p1, p2) = (gauss_pdf(x, -1.0, 1.0), gauss_pdf(x, 2.0, 0.5));
        let p = posterior_from_loglik(&ll, &[0.5, 0.5]).unwrap();
        assert!((p[0] - p1 / (p1 + p2)).abs() < 1e-9);
        assert!(((p[0] + p[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_ties_and_shift_invariance() {
        assert_eq!(argmax_lowest(&[0.0, 1.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0]), 3);
        assert_eq!(argmax_lowest(&[0.0, 0.0, 0.0, 1.0]), 3);
        let mut c = EinsumCircuit::new(spec(4, 2, 2, 2, 2, 5, 3)).unwrap();
        randomize(&mut c, 4);
        let x = [0.1, -0.5, 1.0, 2.0];
        let ll = c.class_loglik(&x).unwrap();
        let shifted: Vec<f64> = ll.iter().map(|v| v + 123.0).collect();
        assert_eq!(c.predict(&x).unwrap(), argmax_lowest(&shifted));
        let post = c.posterior_uniform(&x).unwrap();
        assert_eq!(argmax_lowest(&post), c.predict(&x).unwrap());
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = EinsumCircuit::new(spec(4, 2, 2, 2, 1, 2, 0)).unwrap();
        assert!(c.class_loglik(&[0.0; 3]).is_err());
        assert!(c.class_loglik(&[0.0, f64::NAN, 0.0, 0.0]).is_err());
        let mut c = c;
        assert!(c.set_head_weights(&[1.0, -1.0]).is_err());
        assert!(c.set_sum_weights(0, 0, &[0.0; 8]).is_err());
        assert!(EinsumCircuit::new(spec(4, 0, 2, 2, 1, 2, 0)).is_err());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut c = EinsumCircuit::new(spec(29, 4, 2, 10, 3, 4, 8)).unwrap();
        randomize(&mut c, 1);
        c.set_standardization((0..29).map(|i| i as f64 * 0.1).collect(), vec![1.3; 29]).unwrap();
        let path = std::env::temp_dir().join(format!("rfgest-model-{}.json", std::process::id()));
        c.save(&path).unwrap();
        let back = EinsumCircuit::load(&path).unwrap();
        let x: Vec<f64> = (0..29).map(|i| (i as f64).sin()).collect();
        assert_eq!(c.class_loglik(&x).unwrap(), back.class_loglik(&x).unwrap());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap() + "\n", text);
        std::fs::write(&path, text.replace("rfgest-einsum v1", "other")).unwrap();
        assert!(EinsumCircuit::load(&path).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn default_specs() {
        let s = CircuitSpec::for_kind(FeatureKind::Spr, 21, 0);
        assert_eq!((s.depth, s.sum_components, s.leaf_distributions, s.repetitions, s.classes), (6, 2, 10, 10, 21));
        assert_eq!(CircuitSpec::for_kind(FeatureKind::Sa, 21, 0).depth, 4);
        assert_eq!(CircuitSpec::for_kind(FeatureKind::Wa, 21, 0).num_variables, 38);
    }
}
