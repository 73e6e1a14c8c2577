//! Precision, recall, average precision and score-threshold sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, Bba, Detection};
use crate::matching::{match_dataset, GroundTruth, MatchSequence, SchemeParams};

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub average_precision: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub avg_time_per_image_s: Option<f64>,
}

impl MetricsReport {
    pub fn from_sequence(m: &MatchSequence, avg_time_per_image_s: Option<f64>) -> Self {
        let (precision, recall) = precision_recall(m);
        let tp = m.true_positives();
        MetricsReport {
            precision,
            recall,
            average_precision: average_precision(&pr_curve(m)),
            true_positives: tp,
            false_positives: m.false_positives(),
            false_negatives: m.n_ground_truth.saturating_sub(tp),
            avg_time_per_image_s,
        }
    }
}

/// One row of a score-threshold calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub score_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub average_precision: f64,
}

fn ratio(tp: usize, fp: usize, n_gt: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if n_gt == 0 {
        1.0
    } else {
        tp as f64 / n_gt as f64
    };
    (precision, recall)
}

/// `(precision, recall)`; an empty sequence has precision 1 and zero labels give recall 1.
pub fn precision_recall(m: &MatchSequence) -> (f64, f64) {
    let tp = m.true_positives();
    ratio(tp, m.len() - tp, m.n_ground_truth)
}

/// Sweeps a cutoff over the distinct scores from high to low. Outcomes sharing a score
/// enter the curve together. `m` must be in descending score order.
pub fn pr_curve(m: &MatchSequence) -> Vec<PrPoint> {
    debug_assert!(m.scores.windows(2).all(|w| w[0] >= w[1]));
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < m.len() {
        let cutoff = m.scores[i];
        while i < m.len() && m.scores[i] == cutoff {
            if m.outcomes[i] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (precision, recall) = ratio(tp, fp, m.n_ground_truth);
        curve.push(PrPoint {
            recall,
            precision,
            score_cutoff: cutoff,
        });
    }
    curve
}

/// Replaces each precision with the best precision at equal or higher recall.
pub fn precision_envelope(curve: &[PrPoint]) -> Vec<PrPoint> {
    let mut out = curve.to_vec();
    let mut best = 0.0f64;
    for p in out.iter_mut().rev() {
        best = best.max(p.precision);
        p.precision = best;
    }
    out
}

/// All-points interpolated AP: area under the precision envelope from recall 0 to the
/// last recall on the curve.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for p in precision_envelope(curve) {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    ap.clamp(0.0, 1.0)
}

/// Aggregates with `bba` at `score_threshold` and matches the result with `scheme`.
pub fn run_pipeline(
    detections: &[Detection],
    labels: &[GroundTruth],
    scheme: &SchemeParams,
    bba: &Bba,
    score_threshold: f64,
) -> MatchSequence {
    let aggregated = aggregate(detections, bba, score_threshold);
    match_dataset(&aggregated, labels, scheme)
}

/// Default calibration grid `0.05, 0.10, ..., 0.50`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).map(round_grid).collect()
}

/// Snaps a grid value to 10 decimals so `0.15` is not printed as `0.15000000000000002`.
pub fn round_grid(v: f64) -> f64 {
    (v * 1e10).round() / 1e10
}

pub fn threshold_sweep(
    detections: &[Detection],
    labels: &[GroundTruth],
    scheme: &SchemeParams,
    bba: &Bba,
    thresholds: &[f64],
) -> Vec<SweepRow> {
    thresholds
        .par_iter()
        .map(|&t| {
            let m = run_pipeline(detections, labels, scheme, bba, t);
            let (precision, recall) = precision_recall(&m);
            SweepRow {
                score_threshold: t,
                precision,
                recall,
                average_precision: average_precision(&pr_curve(&m)),
            }
        })
        .collect()
}
