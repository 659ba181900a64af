//! Prediction-level fusion of the per-device posteriors, and evaluation
//! metrics.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::circuit::argmax_lowest;
use crate::error::{Error, Result};

/// Smallest log-probability used for zero posteriors (≈ ln of the smallest subnormal).
pub const LOG_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    /// argmax of the product of posteriors.
    #[default]
    Product,
    /// argmax of the mean posterior.
    Average,
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(FusionRule::Product),
            "average" => Ok(FusionRule::Average),
            _ => Err(Error::param(format!("unknown fusion rule {s:?} (product | average)"))),
        }
    }
}

/// Fused class scores: Σ_f max(log p_f(c), −745) for the product rule, the
/// mean probability for averaging.
pub fn fused_scores(posteriors: &[&[f64]], rule: FusionRule) -> Result<Vec<f64>> {
    let first = posteriors.first().ok_or_else(|| Error::data("nothing to fuse"))?;
    let c = first.len();
    for p in posteriors {
        if p.len() != c {
            return Err(Error::DimensionMismatch { expected: c, actual: p.len() });
        }
        if p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::data("posterior with negative or NaN entry"));
        }
    }
    let mut scores = vec![0.0; c];
    for p in posteriors {
        for (s, v) in scores.iter_mut().zip(p.iter()) {
            *s += match rule {
                FusionRule::Product => v.ln().max(LOG_FLOOR),
                FusionRule::Average => v / posteriors.len() as f64,
            };
        }
    }
    Ok(scores)
}

/// 0-based fused class, lowest index on ties.
pub fn fuse_predict(posteriors: &[&[f64]], rule: FusionRule) -> Result<usize> {
    Ok(argmax_lowest(&fused_scores(posteriors, rule)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// raw[true][predicted]
    pub raw: Vec<Vec<usize>>,
    /// Rows divided by class support; all-zero rows stay zero.
    pub normalized: Vec<Vec<f64>>,
}

/// 0-based (true, predicted) pairs into a `classes × classes` matrix.
pub fn confusion_matrix(pairs: &[(usize, usize)], classes: usize) -> Result<ConfusionMatrix> {
    let mut raw = vec![vec![0usize; classes]; classes];
    for &(t, p) in pairs {
        if t >= classes || p >= classes {
            return Err(Error::data(format!("class index outside 1..={classes}")));
        }
        raw[t][p] += 1;
    }
    let normalized = raw
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter().map(|&v| if n == 0 { 0.0 } else { v as f64 / n as f64 }).collect()
        })
        .collect();
    Ok(ConfusionMatrix { raw, normalized })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Percentages; weighted averages use class support, macro averages are unweighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

/// Metrics from 0-based labels. Classes never predicted get precision 0.
pub fn evaluate(truth: &[usize], predicted: &[usize], classes: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::data("cannot evaluate an empty test set"));
    }
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: predicted.len() });
    }
    let pairs: Vec<(usize, usize)> = truth.iter().copied().zip(predicted.iter().copied()).collect();
    let confusion = confusion_matrix(&pairs, classes)?;
    let n = truth.len();
    let correct: usize = (0..classes).map(|c| confusion.raw[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let support: usize = confusion.raw[c].iter().sum();
            let predicted_c: usize = (0..classes).map(|t| confusion.raw[t][c]).sum();
            let tp = confusion.raw[c][c] as f64;
            let precision = if predicted_c == 0 { 0.0 } else { tp / predicted_c as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics { support, precision, recall, f1 }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        100.0 * per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / n as f64
    };
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_avg = |f: fn(&ClassMetrics) -> f64| 100.0 * present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
    Ok(EvalReport {
        samples: n,
        accuracy: 100.0 * correct as f64 / n as f64,
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        macro_precision: macro_avg(|m| m.precision),
        macro_recall: macro_avg(|m| m.recall),
        macro_f1: macro_avg(|m| m.f1),
        per_class,
        confusion,
    })
}

impl EvalReport {
    /// Aligned text summary.
    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        writeln!(s, "{title}").unwrap();
        writeln!(s, "samples   {}", self.samples).unwrap();
        for (name, w, m) in [
            ("accuracy", self.accuracy, self.accuracy),
            ("precision", self.precision, self.macro_precision),
            ("recall", self.recall, self.macro_recall),
            ("f1", self.f1, self.macro_f1),
        ] {
            writeln!(s, "{name:<10}{w:>7.2}  (macro {m:.2})").unwrap();
        }
        writeln!(s, "\nclass  support  precision  recall     f1").unwrap();
        for (c, m) in self.per_class.iter().enumerate() {
            writeln!(
                s,
                "{:>5}  {:>7}  {:>9.2}  {:>6.2}  {:>5.2}",
                c + 1,
                m.support,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1
            )
            .unwrap();
        }
        s
    }
}

impl ConfusionMatrix {
    /// Delimited values with 1-based class labels; `normalized` picks the matrix.
    pub fn to_csv(&self, normalized: bool) -> String {
        let c = self.raw.len();
        let mut s = String::from("true\\pred");
        for p in 1..=c {
            write!(s, ",{p}").unwrap();
        }
        s.push('\n');
        for t in 0..c {
            write!(s, "{}", t + 1).unwrap();
            for p in 0..c {
                if normalized {
                    write!(s, ",{}", self.normalized[t][p]).unwrap();
                } else {
                    write!(s, ",{}", self.raw[t][p]).unwrap();
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_plus_one_hot() {
        let u = [0.25; 4];
        let hot = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(fuse_predict(&[&u, &u, &hot], FusionRule::Product).unwrap(), 2);
        assert_eq!(fuse_predict(&[&u, &u, &hot], FusionRule::Average).unwrap(), 2);
    }

    #[test]
    fn hand_worked_product() {
        let scores = fused_scores(&[&[0.6, 0.4], &[0.3, 0.7], &[0.3, 0.7]], FusionRule::Product).unwrap();
        assert!((scores[0].exp() - 0.054).abs() < 1e-12);
        assert!((scores[1].exp() - 0.196).abs() < 1e-12);
        assert_eq!(fuse_predict(&[&[0.6, 0.4], &[0.3, 0.7], &[0.3, 0.7]], FusionRule::Product).unwrap(), 1);
    }

    #[test]
    fn identical_posteriors_match_single_model() {
        let p = [0.1, 0.5, 0.4];
        assert_eq!(fuse_predict(&[&p, &p, &p], FusionRule::Product).unwrap(), argmax_lowest(&p));
        assert_eq!(fuse_predict(&[&[0.5, 0.5][..]; 3], FusionRule::Product).unwrap(), 0);
    }

    #[test]
    fn fusion_errors() {
        assert!(fuse_predict(&[&[0.5, 0.5], &[1.0]], FusionRule::Product).is_err());
        assert!(fuse_predict(&[], FusionRule::Product).is_err());
        assert!("max".parse::<FusionRule>().is_err());
    }

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2, 1];
        let r = evaluate(&t, &t, 3).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.macro_f1] {
            assert_eq!(v, 100.0);
        }
        for (i, row) in r.confusion.normalized.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn half_right_two_classes() {
        let r = evaluate(&[0, 1], &[0, 0], 2).unwrap();
        assert_eq!(r.confusion.raw, vec![vec![1, 0], vec![1, 0]]);
        assert_eq!(r.accuracy, 50.0);
        assert_eq!(r.recall, 50.0);
        assert!((r.precision - 25.0).abs() < 1e-12);
        assert!(evaluate(&[], &[], 2).is_err());
    }

    #[test]
    fn single_off_diagonal() {
        let m = confusion_matrix(&[(2, 4)], 6).unwrap();
        let total: usize = m.raw.iter().flatten().sum();
        assert_eq!(total, 1);
        assert_eq!(m.raw[2][4], 1);
        assert_eq!(m.normalized[2].iter().sum::<f64>(), 1.0);
        assert!(m.to_csv(false).lines().nth(3).unwrap().starts_with("3,0,0,0,0,1"));
    }

    proptest! {
        #[test]
        fn accuracy_is_trace_over_total(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let r = evaluate(&t, &p, 5).unwrap();
            let trace: usize = (0..5).map(|i| r.confusion.raw[i][i]).sum();
            prop_assert!((r.accuracy - 100.0 * trace as f64 / t.len() as f64).abs() < 1e-12);
            for row in &r.confusion.normalized {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            }
            for v in [r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
            }
        }

        #[test]
        fn product_ignores_rescaling(a in proptest::collection::vec(0.01f64..1.0, 4),
                                     b in proptest::collection::vec(0.01f64..1.0, 4),
                                     k in 0.01f64..100.0) {
            let scaled: Vec<f64> = a.iter().map(|v| v * k).collect();
            prop_assert_eq!(
                fuse_predict(&[&a, &b], FusionRule::Product).unwrap(),
                fuse_predict(&[&scaled, &b], FusionRule::Product).unwrap()
            );
        }
    }
}
