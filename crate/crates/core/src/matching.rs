//! Generalized ground-truth matching.
//!
//! Each prediction, in descending score order, is compared against the labels still
//! unmatched; labels are visited by descending IoU and a label matches when
//! `IoU >= epsilon`, the prediction has fewer than `g_max` matches so far, and
//! `area(pred) > a_min * area(label)`. Every match records one true positive; a
//! prediction with no match records one false positive. Matched labels leave the pool.
//!
//! VOC2012 is `(0.5, 1, 0)`. The SAR-APD scheme `(0.0025, unbounded, 0.25)` lets one
//! large prediction cover a whole group of people.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::aggregation::{Detection, DetectionError};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("predictions not score-sorted (index {0})")]
    Unsorted(usize),
    #[error("IoU threshold {0} outside [0, 1]")]
    Epsilon(f64),
    #[error("g_max must be at least 1")]
    MaxMatches,
    #[error("a_min {0} outside [0, 1]")]
    AreaRatio(f64),
}

/// A labelled object.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    bbox: BBox,
    class_label: String,
    image_id: String,
}

impl GroundTruth {
    pub fn new(
        bbox: BBox,
        class_label: impl Into<String>,
        image_id: impl Into<String>,
    ) -> Result<Self, DetectionError> {
        let class_label = class_label.into();
        if class_label.is_empty() {
            return Err(DetectionError::EmptyClass);
        }
        Ok(GroundTruth {
            bbox,
            class_label,
            image_id: image_id.into(),
        })
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub(crate) fn set_image_id(&mut self, image_id: &str) {
        self.image_id = image_id.to_string();
    }
}

/// Matching parameters `(epsilon, g_max, a_min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub epsilon: f64,
    /// `None` means a prediction may match any number of labels.
    pub g_max: Option<usize>,
    pub a_min: f64,
}

impl SchemeParams {
    pub fn new(epsilon: f64, g_max: Option<usize>, a_min: f64) -> Result<Self, MatchError> {
        let p = SchemeParams {
            epsilon,
            g_max,
            a_min,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn voc2012() -> Self {
        SchemeParams {
            epsilon: 0.5,
            g_max: Some(1),
            a_min: 0.0,
        }
    }

    pub fn sar_apd() -> Self {
        SchemeParams {
            epsilon: 0.0025,
            g_max: None,
            a_min: 0.25,
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(MatchError::Epsilon(self.epsilon));
        }
        if self.g_max == Some(0) {
            return Err(MatchError::MaxMatches);
        }
        if !(0.0..=1.0).contains(&self.a_min) {
            return Err(MatchError::AreaRatio(self.a_min));
        }
        Ok(())
    }

    fn allows_another(&self, matched: usize) -> bool {
        self.g_max.is_none_or(|cap| matched < cap)
    }
}

/// TP/FP outcomes in descending score order, with the label count they are measured against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSequence {
    /// `true` for a true positive.
    pub outcomes: Vec<bool>,
    /// Score of the prediction each outcome came from.
    pub scores: Vec<f64>,
    pub n_ground_truth: usize,
}

impl MatchSequence {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn true_positives(&self) -> usize {
        self.outcomes.iter().filter(|&&tp| tp).count()
    }

    pub fn false_positives(&self) -> usize {
        self.outcomes.len() - self.true_positives()
    }
}

/// Outcomes produced by one prediction.
fn match_prediction(
    pred: &Detection,
    pool: &mut Vec<usize>,
    labels: &[GroundTruth],
    params: &SchemeParams,
) -> Vec<bool> {
    let pred_area = pred.bbox().area();
    let mut ranked: Vec<(usize, f64)> = pool
        .iter()
        .map(|&k| (k, iou(pred.bbox(), labels[k].bbox())))
        .collect();
    // stable sort keeps label input order among equal IoUs
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut matched = Vec::new();
    for (k, overlap) in ranked {
        let large_enough = pred_area > params.a_min * labels[k].bbox().area();
        if overlap >= params.epsilon && params.allows_another(matched.len()) && large_enough {
            matched.push(k);
        }
    }
    if matched.is_empty() {
        return vec![false];
    }
    pool.retain(|k| !matched.contains(k));
    vec![true; matched.len()]
}

/// Runs the matching over one image/class: `predictions` must be sorted by non-increasing
/// score.
pub fn match_boxes_generic(
    predictions: &[Detection],
    labels: &[GroundTruth],
    params: &SchemeParams,
) -> Result<MatchSequence, MatchError> {
    if let Some(i) = predictions
        .windows(2)
        .position(|w| w[0].score() < w[1].score())
    {
        return Err(MatchError::Unsorted(i + 1));
    }
    let mut pool: Vec<usize> = (0..labels.len()).collect();
    let mut seq = MatchSequence {
        n_ground_truth: labels.len(),
        ..MatchSequence::default()
    };
    for pred in predictions {
        let outcomes = match_prediction(pred, &mut pool, labels, params);
        seq.scores
            .extend(std::iter::repeat_n(pred.score(), outcomes.len()));
        seq.outcomes.extend(outcomes);
    }
    Ok(seq)
}

/// Matches a whole dataset per `(image_id, class_label)` and merges the outcomes into one
/// sequence ordered by descending score (ties by image id, then detection input order).
pub fn match_dataset(
    detections: &[Detection],
    labels: &[GroundTruth],
    params: &SchemeParams,
) -> MatchSequence {
    type Key<'a> = (&'a str, &'a str);
    let mut groups: BTreeMap<Key, (Vec<usize>, Vec<GroundTruth>)> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        groups
            .entry((d.image_id(), d.class_label()))
            .or_default()
            .0
            .push(i);
    }
    for gt in labels {
        groups
            .entry((gt.image_id(), gt.class_label()))
            .or_default()
            .1
            .push(gt.clone());
    }

    // (score, image_id, detection index, outcome)
    let mut merged: Vec<(f64, &str, usize, bool)> = Vec::new();
    for ((image_id, _), (mut det_idx, gts)) in groups {
        det_idx.sort_by(|&a, &b| detections[b].score().total_cmp(&detections[a].score()));
        let mut pool: Vec<usize> = (0..gts.len()).collect();
        for i in det_idx {
            for tp in match_prediction(&detections[i], &mut pool, &gts, params) {
                merged.push((detections[i].score(), image_id, i, tp));
            }
        }
    }
    merged.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(&b.2))
    });

    MatchSequence {
        outcomes: merged.iter().map(|m| m.3).collect(),
        scores: merged.iter().map(|m| m.0).collect(),
        n_ground_truth: labels.len(),
    }
}

/// Orders two detections by descending score.
pub fn score_order(a: &Detection, b: &Detection) -> Ordering {
    b.score().total_cmp(&a.score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn pred(b: BBox, s: f64) -> Detection {
        Detection::new(b, s, "person", "img").unwrap()
    }

    fn gt(b: BBox) -> GroundTruth {
        GroundTruth::new(b, "person", "img").unwrap()
    }

    /// Five 60x60 people in a tight group and one box around all of them.
    fn group_fixture() -> (Detection, Vec<GroundTruth>) {
        let offsets = [
            (0.0, 0.0),
            (70.0, 10.0),
            (140.0, 0.0),
            (30.0, 80.0),
            (110.0, 90.0),
        ];
        let labels = offsets
            .iter()
            .map(|&(x, y)| gt(bb(1000.0 + x, 1000.0 + y, 1060.0 + x, 1060.0 + y)))
            .collect();
        (pred(bb(990.0, 990.0, 1210.0, 1160.0), 0.8), labels)
    }

    #[test]
    fn presets() {
        assert_eq!(
            SchemeParams::voc2012(),
            SchemeParams::new(0.5, Some(1), 0.0).unwrap()
        );
        assert_eq!(
            SchemeParams::sar_apd(),
            SchemeParams::new(0.0025, None, 0.25).unwrap()
        );
        assert_eq!(
            SchemeParams::new(1.5, None, 0.0),
            Err(MatchError::Epsilon(1.5))
        );
        assert_eq!(
            SchemeParams::new(0.5, Some(0), 0.0),
            Err(MatchError::MaxMatches)
        );
        assert_eq!(
            SchemeParams::new(0.5, None, -0.1),
            Err(MatchError::AreaRatio(-0.1))
        );
    }

    #[test]
    fn group_box_scores_five_under_sar_apd() {
        let (p, labels) = group_fixture();
        let seq = match_boxes_generic(&[p], &labels, &SchemeParams::sar_apd()).unwrap();
        assert_eq!(seq.outcomes, vec![true; 5]);
        assert_eq!(seq.scores, vec![0.8; 5]);
    }

    #[test]
    fn group_box_scores_zero_under_voc() {
        let (p, labels) = group_fixture();
        for l in &labels {
            assert!(iou(p.bbox(), l.bbox()) < 0.5);
        }
        let seq = match_boxes_generic(&[p], &labels, &SchemeParams::voc2012()).unwrap();
        assert_eq!(seq.outcomes, vec![false]);
        assert_eq!(seq.n_ground_truth - seq.true_positives(), 5);
    }

    #[test]
    fn duplicate_is_false_positive_under_voc() {
        let label = gt(bb(0.0, 0.0, 10.0, 10.0));
        let preds = [
            pred(bb(0.0, 0.0, 10.0, 10.0), 0.9),
            pred(bb(1.0, 0.0, 10.0, 10.0), 0.8),
        ];
        let seq = match_boxes_generic(&preds, &[label], &SchemeParams::voc2012()).unwrap();
        assert_eq!(seq.outcomes, vec![true, false]);
    }

    #[test]
    fn area_gate_rejects_tiny_prediction() {
        let label = gt(bb(0.0, 0.0, 60.0, 60.0));
        let tiny = pred(bb(20.0, 20.0, 30.0, 30.0), 0.9);
        let overlap = iou(tiny.bbox(), label.bbox());
        assert!(overlap >= 0.0025);
        let seq = match_boxes_generic(
            std::slice::from_ref(&tiny),
            std::slice::from_ref(&label),
            &SchemeParams::sar_apd(),
        )
        .unwrap();
        assert_eq!(seq.outcomes, vec![false]);
        // a_min = 0 variant accepts it
        let relaxed = SchemeParams {
            a_min: 0.0,
            ..SchemeParams::sar_apd()
        };
        let seq = match_boxes_generic(&[tiny], &[label], &relaxed).unwrap();
        assert_eq!(seq.outcomes, vec![true]);
    }

    #[test]
    fn gated_label_stays_available() {
        let label = gt(bb(0.0, 0.0, 60.0, 60.0));
        let preds = [
            pred(bb(20.0, 20.0, 30.0, 30.0), 0.9),
            pred(bb(0.0, 0.0, 50.0, 60.0), 0.5),
        ];
        let seq = match_boxes_generic(&preds, &[label], &SchemeParams::sar_apd()).unwrap();
        assert_eq!(seq.outcomes, vec![false, true]);
    }

    #[test]
    fn g_max_caps_matches_in_iou_order() {
        let (p, labels) = group_fixture();
        let params = SchemeParams::new(0.0025, Some(2), 0.0).unwrap();
        let seq = match_boxes_generic(&[p.clone(), p], &labels, &params).unwrap();
        assert_eq!(seq.outcomes, vec![true; 4]);
    }

    #[test]
    fn unsorted_predictions_rejected() {
        let preds = [
            pred(bb(0.0, 0.0, 1.0, 1.0), 0.1),
            pred(bb(0.0, 0.0, 1.0, 1.0), 0.9),
        ];
        assert_eq!(
            match_boxes_generic(&preds, &[], &SchemeParams::voc2012()),
            Err(MatchError::Unsorted(1))
        );
    }

    #[test]
    fn dataset_matching() {
        let mk =
            |img: &str, s: f64| Detection::new(bb(0.0, 0.0, 10.0, 10.0), s, "person", img).unwrap();
        let labels = vec![
            GroundTruth::new(bb(0.0, 0.0, 10.0, 10.0), "person", "a").unwrap(),
            GroundTruth::new(bb(0.0, 0.0, 10.0, 10.0), "person", "b").unwrap(),
        ];
        let seq = match_dataset(
            &[mk("a", 0.9), mk("b", 0.8)],
            &labels,
            &SchemeParams::voc2012(),
        );
        assert_eq!(seq.outcomes, vec![true, true]);
        assert_eq!(seq.n_ground_truth, 2);

        let seq = match_dataset(
            &[mk("c", 0.9), mk("c", 0.3)],
            &labels,
            &SchemeParams::voc2012(),
        );
        assert_eq!(seq.outcomes, vec![false, false]);

        let seq = match_dataset(&[], &labels, &SchemeParams::voc2012());
        assert!(seq.is_empty());
        assert_eq!(seq.n_ground_truth, 2);
    }

    #[test]
    fn dataset_order_matches_flatten_and_sort() {
        let labels = vec![
            GroundTruth::new(bb(0.0, 0.0, 10.0, 10.0), "person", "a").unwrap(),
            GroundTruth::new(bb(20.0, 0.0, 30.0, 10.0), "person", "b").unwrap(),
        ];
        let dets = vec![
            Detection::new(bb(0.0, 0.0, 10.0, 10.0), 0.4, "person", "a").unwrap(),
            Detection::new(bb(20.0, 0.0, 30.0, 10.0), 0.7, "person", "b").unwrap(),
            Detection::new(bb(1.0, 0.0, 10.0, 10.0), 0.9, "person", "a").unwrap(),
            Detection::new(bb(50.0, 0.0, 60.0, 10.0), 0.7, "person", "a").unwrap(),
        ];
        let seq = match_dataset(&dets, &labels, &SchemeParams::voc2012());

        // oracle: per-image sequences, flattened, then a stable sort by score with the
        // image id as secondary key
        let mut flat = Vec::new();
        for img in ["a", "b"] {
            let mut preds: Vec<_> = dets
                .iter()
                .filter(|d| d.image_id() == img)
                .cloned()
                .collect();
            preds.sort_by(score_order);
            let gts: Vec<_> = labels
                .iter()
                .filter(|g| g.image_id() == img)
                .cloned()
                .collect();
            let s = match_boxes_generic(&preds, &gts, &SchemeParams::voc2012()).unwrap();
            flat.extend(
                s.scores
                    .into_iter()
                    .zip(s.outcomes)
                    .map(|(sc, o)| (sc, img, o)),
            );
        }
        flat.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        assert_eq!(seq.outcomes, flat.iter().map(|f| f.2).collect::<Vec<_>>());
        assert_eq!(seq.scores, vec![0.9, 0.7, 0.7, 0.4]);
        assert_eq!(seq.outcomes, vec![true, false, true, false]);
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
        let b = (0.0..50.0f64, 0.0..50.0f64, 1.0..25.0f64, 1.0..25.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h));
        (
            prop::collection::vec((b.clone(), 0.0..=1.0f64), 0..10),
            prop::collection::vec(b, 0..10),
        )
            .prop_map(|(p, g)| {
                let mut preds: Vec<_> = p.into_iter().map(|(b, s)| pred(b, s)).collect();
                preds.sort_by(score_order);
                (preds, g.into_iter().map(gt).collect())
            })
    }

    proptest! {
        #[test]
        fn sequence_invariants((preds, labels) in arb_instance(), eps in 0.0..1.0f64, cap in 1usize..4) {
            let params = SchemeParams::new(eps, Some(cap), 0.1).unwrap();
            let seq = match_boxes_generic(&preds, &labels, &params).unwrap();
            prop_assert!(seq.true_positives() <= seq.n_ground_truth);
            prop_assert_eq!(seq.outcomes.len(), seq.scores.len());
            // no prediction yields more than cap TPs: consecutive TPs share one score only
            // when they could come from one prediction, so count per prediction directly
            let mut pool: Vec<usize> = (0..labels.len()).collect();
            for p in &preds {
                let out = match_prediction(p, &mut pool, &labels, &params);
                prop_assert!(out.iter().filter(|&&t| t).count() <= cap);
            }
            let voc = match_boxes_generic(&preds, &labels, &SchemeParams::voc2012()).unwrap();
            prop_assert_eq!(voc.len(), preds.len());
        }

        #[test]
        fn lowering_epsilon_never_loses_tps((preds, labels) in arb_instance(), hi in 0.0..1.0f64, frac in 0.0..1.0f64) {
            let lo = hi * frac;
            let strict = match_boxes_generic(&preds, &labels, &SchemeParams::new(hi, None, 0.0).unwrap()).unwrap();
            let loose = match_boxes_generic(&preds, &labels, &SchemeParams::new(lo, None, 0.0).unwrap()).unwrap();
            prop_assert!(loose.true_positives() >= strict.true_positives());
        }

        #[test]
        fn uniform_scaling_keeps_outcomes((preds, labels) in arb_instance(), s in prop::sample::select(vec![0.1, 10.0, 4.0, 0.5])) {
            let scale_p: Vec<_> = preds.iter().map(|p| p.with_bbox(p.bbox().scaled(s).unwrap())).collect();
            let scale_g: Vec<_> = labels.iter().map(|g| gt(g.bbox().scaled(s).unwrap())).collect();
            for params in [SchemeParams::voc2012(), SchemeParams::sar_apd()] {
                let a = match_boxes_generic(&preds, &labels, &params).unwrap();
                let b = match_boxes_generic(&scale_p, &scale_g, &params).unwrap();
                prop_assert_eq!(a.outcomes, b.outcomes);
            }
        }
    }
}
