//! Evaluation math. Every threshold comparison is strict: IoU must exceed
//! `tau`, F1 predicts positive only above the mean, and a paired item is
//! correct only when it strictly outscores every distractor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Region;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub label: bool,
}

impl LabeledScore {
    pub fn new(score: f64, label: bool) -> Self {
        Self { score, label }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    /// Examples in the manifest.
    pub total: usize,
    /// Examples that contributed to the metric.
    pub scored: usize,
    /// Examples dropped after a failure.
    pub excluded: usize,
    /// Scored examples that had no regions and ran without guidance.
    #[serde(default)]
    pub unguided: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub support: Support,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, support: Support) -> Self {
        Self {
            metric: metric.into(),
            value,
            support,
            threshold: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }
}

/// Intersection over union of pixel areas.
pub fn iou(a: &Region, b: &Region) -> f64 {
    let iw = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0);
    let ih = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Fraction of `(prediction, gold)` pairs with IoU strictly above `tau`.
pub fn accuracy_at_iou(pairs: &[(Region, Region)], tau: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = pairs.iter().filter(|(p, g)| iou(p, g) > tau).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Exact AUROC as the Mann-Whitney statistic with mid-ranks for ties.
pub fn auroc(data: &[LabeledScore]) -> Result<f64> {
    let n_pos = data.iter().filter(|d| d.label).count();
    let n_neg = data.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[a].score.total_cmp(&data[b].score));
    // Sum of 1-based positive ranks, doubled so mid-ranks stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && data[order[j + 1]].score == data[order[i]].score {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| data[k].label).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// ROC points `(fpr, tpr)` from the highest threshold down, one per
/// distinct score, starting at `(0, 0)`.
pub fn roc_curve(data: &[LabeledScore]) -> Result<Vec<(f64, f64)>> {
    let n_pos = data.iter().filter(|d| d.label).count();
    let n_neg = data.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut sorted: Vec<LabeledScore> = data.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`].
pub fn auroc_trapezoidal(data: &[LabeledScore]) -> Result<f64> {
    let pts = roc_curve(data)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1AtMean {
    pub f1: f64,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// F1 after predicting positive for scores strictly above the mean score.
pub fn f1_at_mean_threshold(data: &[LabeledScore]) -> Result<F1AtMean> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let threshold = data.iter().map(|d| d.score).sum::<f64>() / data.len() as f64;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for d in data {
        match (d.score > threshold, d.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1AtMean {
        f1,
        threshold,
        precision,
        recall,
    })
}

/// One correct item scored against its distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedGroup {
    pub correct: f64,
    pub distractors: Vec<f64>,
    /// Key of the pair this group belongs to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    /// Key of the set of four this group belongs to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_id: Option<String>,
}

impl PairedGroup {
    pub fn new(correct: f64, distractors: Vec<f64>) -> Self {
        Self {
            correct,
            distractors,
            pair_id: None,
            quad_id: None,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.distractors.iter().all(|d| self.correct > *d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedAccuracy {
    pub individual: f64,
    /// Over pair keys; `None` when no group carries one.
    pub pairs: Option<f64>,
    pub set_of_four: Option<f64>,
}

/// Fraction of groups whose correct item strictly beats every distractor.
pub fn paired_accuracy(groups: &[PairedGroup]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    if groups.iter().any(|g| g.distractors.is_empty()) {
        return Err(Error::InvalidConfig("every paired group needs a distractor".into()));
    }
    Ok(groups.iter().filter(|g| g.is_correct()).count() as f64 / groups.len() as f64)
}

fn all_correct_by<'a>(groups: &'a [PairedGroup], key: impl Fn(&'a PairedGroup) -> Option<&'a str>) -> Option<f64> {
    let mut buckets: BTreeMap<&str, bool> = BTreeMap::new();
    for g in groups {
        if let Some(k) = key(g) {
            let ok = buckets.entry(k).or_insert(true);
            *ok &= g.is_correct();
        }
    }
    if buckets.is_empty() {
        return None;
    }
    Some(buckets.values().filter(|ok| **ok).count() as f64 / buckets.len() as f64)
}

/// Individual, pair-level and set-of-four accuracy. A pair or set counts as
/// correct only when every member group is correct.
pub fn grouped_accuracy(groups: &[PairedGroup]) -> Result<PairedAccuracy> {
    Ok(PairedAccuracy {
        individual: paired_accuracy(groups)?,
        pairs: all_correct_by(groups, |g| g.pair_id.as_deref()),
        set_of_four: all_correct_by(groups, |g| g.quad_id.as_deref()),
    })
}
