//! Per-node anomaly scores from reconstruction error, threshold policies,
//! and the AUC / precision / recall / F1 metrics.

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::numerics::{dot, sigmoid, DenseMatrix};

/// Minimum number of non-neighbors sampled per node in sampled mode.
pub const MIN_SAMPLED_NEGATIVES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Dense,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScores {
    pub scores: Vec<f64>,
    pub mode: ScoreMode,
}

/// Mean squared reconstruction error of each node's adjacency row.
///
/// Dense mode averages over all `N` columns (diagonal included, target 0).
/// Sampled mode averages over the node's edges plus
/// `max(deg, MIN_SAMPLED_NEGATIVES)` distinct zero-target columns drawn
/// from a per-node stream of `seed`.
pub fn node_scores(g: &SparseGraph, z: &DenseMatrix, mode: ScoreMode, seed: u64) -> Result<AnomalyScores> {
    if g.num_nodes() != z.rows() {
        return Err(Error::Shape {
            op: "node_scores",
            lhs: (g.num_nodes(), g.num_nodes()),
            rhs: z.shape(),
        });
    }
    z.ensure_finite("embeddings")?;
    let target = g.without_self_loops();
    let n = target.num_nodes();
    let sq = |i: usize, j: usize, t: f64| {
        let p = sigmoid(dot(z.row(i), z.row(j)));
        (p - t) * (p - t)
    };
    let scores = match mode {
        ScoreMode::Dense => (0..n)
            .map(|i| {
                let nbrs = target.neighbors(i);
                let mut cursor = 0;
                let mut total = 0.0;
                for j in 0..n {
                    let t = if cursor < nbrs.len() && nbrs[cursor] == j {
                        cursor += 1;
                        1.0
                    } else {
                        0.0
                    };
                    total += sq(i, j, t);
                }
                total / n as f64
            })
            .collect(),
        ScoreMode::Sampled => (0..n)
            .map(|i| {
                let nbrs = target.neighbors(i);
                let mut total: f64 = nbrs.iter().map(|&j| sq(i, j, 1.0)).sum();
                let population = n - nbrs.len();
                let k = nbrs.len().max(MIN_SAMPLED_NEGATIVES).min(population);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                for r in index::sample(&mut rng, population, k) {
                    let mut col = r;
                    for &nb in nbrs {
                        if nb <= col {
                            col += 1;
                        } else {
                            break;
                        }
                    }
                    total += sq(i, col, 0.0);
                }
                let count = nbrs.len() + k;
                if count == 0 {
                    0.0
                } else {
                    total / count as f64
                }
            })
            .collect(),
    };
    Ok(AnomalyScores { scores, mode })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Expected fraction of anomalous nodes.
    Contamination(f64),
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::Fixed(v) if !v.is_finite() => {
                Err(Error::Config("fixed threshold must be finite".into()))
            }
            ThresholdPolicy::Contamination(q) if !(q > 0.0 && q < 1.0) => {
                Err(Error::Config(format!("contamination rate must lie in (0, 1), got {q}")))
            }
            _ => Ok(()),
        }
    }
}

/// Fixed value, or the linearly interpolated `(1 - q)` quantile of the
/// scores.
pub fn select_threshold(scores: &[f64], policy: ThresholdPolicy) -> Result<f64> {
    policy.validate()?;
    if scores.is_empty() {
        return Err(Error::Input("cannot pick a threshold for zero scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let q = match policy {
        ThresholdPolicy::Fixed(v) => return Ok(v),
        ThresholdPolicy::Contamination(q) => q,
    };
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        warn!("all scores are equal; no node will be flagged");
    }
    let pos = (1.0 - q) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    Ok(match sorted.get(lo + 1) {
        Some(&hi) if frac > 0.0 => sorted[lo] + frac * (hi - sorted[lo]),
        _ => sorted[lo],
    })
}

/// `score > threshold`.
pub fn classify(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

fn check_labels(scores_len: usize, labels: &[u8]) -> Result<(usize, usize)> {
    if scores_len != labels.len() {
        return Err(Error::Input(format!("{scores_len} predictions for {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("labels must be 0 or 1, found {bad}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Mann–Whitney form of the ROC AUC as an exact fraction: returns
/// `(numerator, denominator)` with ties between a positive and a negative
/// counted as half a win (both scaled by 2 to stay integral).
pub fn roc_auc_fraction(scores: &[f64], labels: &[u8]) -> Result<(u128, u128)> {
    let (pos, neg) = check_labels(scores.len(), labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both positive and negative labels".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled midranks: a tie block at 1-based ranks lo..=hi gets lo + hi
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled = (start + 1 + end) as u128;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        rank_sum2 += doubled * positives;
        start = end;
    }
    let (p, n) = (pos as u128, neg as u128);
    Ok((rank_sum2 - p * (p + 1), 2 * p * n))
}

pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (num, den) = roc_auc_fraction(scores, labels)?;
    Ok(num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

pub fn precision_recall_f1(flags: &[bool], labels: &[u8]) -> Result<ClassificationMetrics> {
    check_labels(flags.len(), labels)?;
    let mut c = Confusion::default();
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let (f1, f1_undefined) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    Ok(ClassificationMetrics {
        precision,
        recall,
        f1,
        confusion: c,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

/// The four headline metrics plus confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

pub fn evaluate(scores: &[f64], flags: &[bool], labels: &[u8]) -> Result<MetricsReport> {
    let auc = roc_auc(scores, labels)?;
    let m = precision_recall_f1(flags, labels)?;
    Ok(MetricsReport {
        auc,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        tp: m.confusion.tp,
        fp: m.confusion.fp,
        tn: m.confusion.tn,
        fn_: m.confusion.fn_,
        precision_undefined: m.precision_undefined,
        recall_undefined: m.recall_undefined,
    })
}
