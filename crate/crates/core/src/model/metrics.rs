use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::quantile_sorted;
use crate::stats::midranks;
use crate::{Error, Result};

pub const DECISION_THRESHOLD: f64 = 0.5;
pub const BOOTSTRAP_RNG: &str = "ChaCha20 (rand_chacha ChaCha20Rng::seed_from_u64)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn at(probs: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Ratio with 0 for an empty denominator.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub average_precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 7] = [
        "auc",
        "average_precision",
        "sensitivity",
        "specificity",
        "precision",
        "accuracy",
        "balanced_accuracy",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.auc,
            self.average_precision,
            self.sensitivity,
            self.specificity,
            self.precision,
            self.accuracy,
            self.balanced_accuracy,
        ]
    }

    pub fn compute(probs: &[f64], labels: &[bool]) -> Result<Metrics> {
        check_inputs(probs, labels)?;
        let c = Confusion::at(probs, labels, DECISION_THRESHOLD);
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        Ok(Metrics {
            auc: auc_rank(probs, labels)?,
            average_precision: average_precision(probs, labels)?,
            sensitivity,
            specificity,
            precision: ratio(c.tp, c.tp + c.fp),
            accuracy: ratio(c.tp + c.tn, c.total()),
            balanced_accuracy: 0.5 * (sensitivity + specificity),
        })
    }
}

fn check_inputs(probs: &[f64], labels: &[bool]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::invalid("probability and label counts differ"));
    }
    if !(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)) {
        return Err(Error::invalid("metrics need both classes"));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    Ok(())
}

/// Distinct score thresholds in descending order with cumulative (tp, fp)
/// counts for `score >= threshold`.
fn sweep(probs: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1
        } else {
            fp += 1
        }
        let last = k + 1 == order.len() || probs[order[k + 1]] != probs[i];
        if last {
            out.push((probs[i], tp, fp));
        }
    }
    out
}

/// ROC points from (0, 0) through every distinct threshold.
pub fn roc_curve(probs: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_inputs(probs, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let mut pts = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    for (t, tp, fp) in sweep(probs, labels) {
        pts.push(RocPoint { threshold: t, fpr: ratio(fp, neg), tpr: ratio(tp, pos) });
    }
    Ok(pts)
}

pub fn auc_trapezoid(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Mann-Whitney form: P(score_pos > score_neg) + ½ P(tie).
pub fn auc_rank(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let ranks = midranks(probs);
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let r: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Ok((r - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

pub fn pr_curve(probs: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    check_inputs(probs, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    Ok(sweep(probs, labels)
        .into_iter()
        .map(|(t, tp, fp)| PrPoint { threshold: t, recall: ratio(tp, pos), precision: ratio(tp, tp + fp) })
        .collect())
}

/// `Σ (R_k − R_{k−1}) P_k` over descending thresholds.
pub fn average_precision(probs: &[f64], labels: &[bool]) -> Result<f64> {
    let pts = pr_curve(probs, labels)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in pts {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub rng: String,
    pub seed: u64,
    pub n_resamples: usize,
    /// Resamples discarded because they held a single class.
    pub redraws: usize,
    pub auc: Interval,
    pub average_precision: Interval,
    pub sensitivity: Interval,
    pub specificity: Interval,
    pub precision: Interval,
    pub accuracy: Interval,
    pub balanced_accuracy: Interval,
}

impl BootstrapCi {
    pub fn intervals(&self) -> [(&'static str, Interval); 7] {
        [
            ("auc", self.auc),
            ("average_precision", self.average_precision),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("precision", self.precision),
            ("accuracy", self.accuracy),
            ("balanced_accuracy", self.balanced_accuracy),
        ]
    }
}

/// Percentile (2.5, 97.5) intervals over `n_resamples` subject resamples.
/// Index draws are sequential from one seeded stream; metric evaluation is
/// parallel but order-preserving.
pub fn bootstrap_ci(probs: &[f64], labels: &[bool], n_resamples: usize, seed: u64) -> Result<BootstrapCi> {
    check_inputs(probs, labels)?;
    if n_resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let n = probs.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples: Vec<Vec<usize>> = Vec::with_capacity(n_resamples);
    let mut redraws = 0;
    while samples.len() < n_resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        if pos == 0 || pos == n {
            redraws += 1;
            continue;
        }
        samples.push(idx);
    }
    let values: Vec<[f64; 7]> = samples
        .par_iter()
        .map(|idx| {
            let p: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            Metrics::compute(&p, &l).expect("both classes present").to_array()
        })
        .collect();
    let interval = |k: usize| {
        let mut v: Vec<f64> = values.iter().map(|a| a[k]).collect();
        v.sort_by(f64::total_cmp);
        Interval { lower: quantile_sorted(&v, 0.025), upper: quantile_sorted(&v, 0.975) }
    };
    Ok(BootstrapCi {
        rng: BOOTSTRAP_RNG.to_string(),
        seed,
        n_resamples,
        redraws,
        auc: interval(0),
        average_precision: interval(1),
        sensitivity: interval(2),
        specificity: interval(3),
        precision: interval(4),
        accuracy: interval(5),
        balanced_accuracy: interval(6),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_and_rates() {
        let p = [0.9, 0.6, 0.4, 0.2, 0.7];
        let y = [true, true, true, false, false];
        let c = Confusion::at(&p, &y, 0.5);
        assert_eq!(c, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        let m = Metrics::compute(&p, &y).unwrap();
        assert_eq!(m.sensitivity, 2.0 / 3.0);
        assert_eq!(m.specificity, 0.5);
        assert_eq!(m.accuracy, 0.6);
        // positives beat negatives in 4 of 6 pairs
        assert!((m.auc - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rank_auc_equals_trapezoid_with_ties() {
        let p = [0.1, 0.4, 0.4, 0.8, 0.8, 0.8, 0.3, 0.9];
        let y = [false, true, false, true, false, true, false, true];
        let roc = roc_curve(&p, &y).unwrap();
        assert_eq!(roc.last().map(|r| (r.fpr, r.tpr)), Some((1.0, 1.0)));
        assert!((auc_trapezoid(&roc) - auc_rank(&p, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking() {
        let p = [0.1, 0.2, 0.8, 0.9];
        let y = [false, false, true, true];
        let m = Metrics::compute(&p, &y).unwrap();
        assert_eq!((m.auc, m.average_precision, m.balanced_accuracy), (1.0, 1.0, 1.0));
        let ci = bootstrap_ci(&p, &y, 200, 1).unwrap();
        assert_eq!((ci.auc.lower, ci.auc.upper), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let p = [0.1, 0.7, 0.35, 0.8, 0.4, 0.55, 0.2];
        let y = [false, true, false, true, true, false, false];
        let a = bootstrap_ci(&p, &y, 500, 42).unwrap();
        let b = bootstrap_ci(&p, &y, 500, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, bootstrap_ci(&p, &y, 500, 43).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        assert!(Metrics::compute(&[0.1, 0.2], &[true, true]).is_err());
    }
}
