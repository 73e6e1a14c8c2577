//! Bounding-box aggregation: greedy NMS and merging of overlapping boxes (MOB).
//!
//! MOB links every pair of boxes with `IoU > omega`, takes the connected components of
//! that graph (single linkage), optionally subdivides components whose enclosure would
//! inflate beyond `i_max` times the largest input box, and replaces each component by one
//! merged box scored with the mean member score. The pass repeats up to `m_max` times,
//! stopping once a single box is left or a pass changes nothing.
//!
//! All entry points here operate on one `(image_id, class_label)` group; use
//! [`aggregate`] to run a method over a mixed dump.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{enclose, iou, BBox, GeometryError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("empty class label")]
    EmptyClass,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("omega must lie in [0, 1), got {0}")]
    Omega(f64),
    #[error("m_max must be at least 1")]
    Iterations,
    #[error("i_max must be positive, got {0}")]
    Inflation(f64),
    #[error("top_k must be at least 1")]
    TopK,
}

/// A scored box with its class and source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    bbox: BBox,
    score: f64,
    class_label: String,
    image_id: String,
}

impl Detection {
    pub fn new(
        bbox: BBox,
        score: f64,
        class_label: impl Into<String>,
        image_id: impl Into<String>,
    ) -> Result<Self, DetectionError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectionError::InvalidScore(score));
        }
        let class_label = class_label.into();
        if class_label.is_empty() {
            return Err(DetectionError::EmptyClass);
        }
        Ok(Detection {
            bbox,
            score,
            class_label,
            image_id: image_id.into(),
        })
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    /// Same detection with its box replaced.
    pub fn with_bbox(&self, bbox: BBox) -> Detection {
        Detection {
            bbox,
            ..self.clone()
        }
    }
}

/// How a cluster collapses into one box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeStrategy {
    /// Smallest box enclosing every member.
    #[default]
    Enclose,
    /// Coordinate-wise mean of the member boxes.
    Average,
}

/// Which box set the inflation bound `A_max = i_max * max area` is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AreaBound {
    /// The boxes given to `mob` (after score filtering); fixed across iterations.
    #[default]
    Initial,
    /// The input boxes of each iteration.
    PerIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobConfig {
    pub omega: f64,
    pub m_max: usize,
    /// `None` disables subdivision.
    pub i_max: Option<f64>,
    pub top_k: Option<usize>,
    pub merge_strategy: MergeStrategy,
    pub area_bound: AreaBound,
}

impl Default for MobConfig {
    fn default() -> Self {
        MobConfig {
            omega: 0.0,
            m_max: 3,
            i_max: Some(100.0),
            top_k: None,
            merge_strategy: MergeStrategy::Enclose,
            area_bound: AreaBound::Initial,
        }
    }
}

impl MobConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.omega >= 0.0 && self.omega < 1.0) {
            return Err(ConfigError::Omega(self.omega));
        }
        if self.m_max == 0 {
            return Err(ConfigError::Iterations);
        }
        if let Some(i) = self.i_max {
            if i.is_nan() || i <= 0.0 {
                return Err(ConfigError::Inflation(i));
            }
        }
        if self.top_k == Some(0) {
            return Err(ConfigError::TopK);
        }
        Ok(())
    }
}

/// One connected component of the overlap graph (or a subdivision of one).
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapCluster {
    members: Vec<Detection>,
}

impl OverlapCluster {
    /// Panics on an empty member list.
    pub fn new(members: Vec<Detection>) -> Self {
        assert!(!members.is_empty(), "overlap cluster must be non-empty");
        OverlapCluster { members }
    }

    pub fn members(&self) -> &[Detection] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn into_members(self) -> Vec<Detection> {
        self.members
    }

    pub fn enclosure(&self) -> BBox {
        enclose(self.members.iter().map(|d| &d.bbox)).expect("cluster is non-empty")
    }
}

fn by_score_desc(a: &Detection, b: &Detection) -> Ordering {
    b.score.total_cmp(&a.score)
}

fn sorted_by_score(mut dets: Vec<Detection>) -> Vec<Detection> {
    // stable: equal scores keep their input order
    dets.sort_by(by_score_desc);
    dets
}

/// Greedy non-maximum suppression.
///
/// Drops detections scoring below `score_threshold`, then keeps the best remaining
/// detection and discards everything with `IoU > omega` against it, until nothing is left.
pub fn nms(dets: &[Detection], omega: f64, score_threshold: f64) -> Vec<Detection> {
    let candidates = sorted_by_score(
        dets.iter()
            .filter(|d| d.score >= score_threshold)
            .cloned()
            .collect(),
    );
    let mut suppressed = vec![false; candidates.len()];
    let mut keep = Vec::new();
    for i in 0..candidates.len() {
        if suppressed[i] {
            continue;
        }
        let best = &candidates[i];
        for j in (i + 1)..candidates.len() {
            if !suppressed[j] && iou(&best.bbox, &candidates[j].bbox) > omega {
                suppressed[j] = true;
            }
        }
        keep.push(best.clone());
    }
    keep
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Single-linkage clustering with a link between two boxes iff `IoU > omega`.
///
/// Clusters are ordered by their lowest member index and members keep input order.
pub fn cluster_overlaps(dets: &[Detection], omega: f64) -> Vec<OverlapCluster> {
    let n = dets.len();
    let mut sets = DisjointSet::new(n);

    // Sweep over xmin: a link needs positive intersection, so only boxes starting
    // before the current box ends can pair with it.
    let mut by_xmin: Vec<usize> = (0..n).collect();
    by_xmin.sort_by(|&a, &b| dets[a].bbox.xmin().total_cmp(&dets[b].bbox.xmin()));
    for (pos, &i) in by_xmin.iter().enumerate() {
        let right = dets[i].bbox.xmax();
        for &j in &by_xmin[pos + 1..] {
            if dets[j].bbox.xmin() >= right {
                break;
            }
            if iou(&dets[i].bbox, &dets[j].bbox) > omega {
                sets.union(i, j);
            }
        }
    }

    let mut slot_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clusters: Vec<Vec<Detection>> = Vec::new();
    for (i, det) in dets.iter().enumerate() {
        let root = sets.find(i);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[slot].push(det.clone());
    }
    clusters.into_iter().map(OverlapCluster::new).collect()
}

/// Collapses a cluster into one detection.
///
/// With `top_k`, only the `k` best-scoring members (ties by member order) take part.
/// The score is the unweighted mean of the participating scores.
pub fn merge_cluster(
    cluster: &OverlapCluster,
    strategy: MergeStrategy,
    top_k: Option<usize>,
) -> Detection {
    let members = cluster.members();
    if members.len() == 1 {
        return members[0].clone();
    }
    let mut retained: Vec<&Detection> = members.iter().collect();
    retained.sort_by(|a, b| by_score_desc(a, b));
    if let Some(k) = top_k {
        retained.truncate(k.max(1));
    }
    let count = retained.len() as f64;
    let score = (retained.iter().map(|d| d.score).sum::<f64>() / count).clamp(0.0, 1.0);

    let enclosure = enclose(retained.iter().map(|d| &d.bbox)).expect("cluster is non-empty");
    let bbox = match strategy {
        MergeStrategy::Enclose => enclosure,
        MergeStrategy::Average => {
            let mut sums = [0.0f64; 4];
            for d in &retained {
                for (s, v) in sums.iter_mut().zip(d.bbox.to_array()) {
                    *s += v;
                }
            }
            // Rounding can in principle collapse a near-zero side; the enclosure is the
            // only box guaranteed valid in that case.
            BBox::new(
                sums[0] / count,
                sums[1] / count,
                sums[2] / count,
                sums[3] / count,
            )
            .unwrap_or(enclosure)
        }
    };

    let first = retained[0];
    Detection {
        bbox,
        score,
        class_label: first.class_label.clone(),
        image_id: first.image_id.clone(),
    }
}

/// Recursively halves a cluster along the longer axis of its enclosure until every part's
/// enclosure has area at most `a_max`.
///
/// Members are ordered by box centre on that axis (ties by member order) and split into
/// the first `ceil(n/2)` and the remaining `floor(n/2)`. A single box larger than `a_max`
/// cannot be split and is returned as is.
pub fn subdivide(cluster: OverlapCluster, a_max: f64) -> Vec<OverlapCluster> {
    let mut out = Vec::new();
    let indexed: Vec<(usize, Detection)> = cluster.into_members().into_iter().enumerate().collect();
    subdivide_into(indexed, a_max, &mut out);
    out
}

fn subdivide_into(mut part: Vec<(usize, Detection)>, a_max: f64, out: &mut Vec<OverlapCluster>) {
    let bounds = enclose(part.iter().map(|(_, d)| &d.bbox)).expect("part is non-empty");
    if part.len() == 1 || bounds.area() <= a_max {
        out.push(OverlapCluster::new(
            part.into_iter().map(|(_, d)| d).collect(),
        ));
        return;
    }
    let along_x = bounds.width() >= bounds.height();
    let key = |d: &Detection| {
        let (cx, cy) = d.bbox.center();
        if along_x {
            cx
        } else {
            cy
        }
    };
    part.sort_by(|(ia, a), (ib, b)| key(a).total_cmp(&key(b)).then(ia.cmp(ib)));
    let mut upper = part.split_off(part.len().div_ceil(2));
    part.sort_by_key(|(i, _)| *i);
    upper.sort_by_key(|(i, _)| *i);
    subdivide_into(part, a_max, out);
    subdivide_into(upper, a_max, out);
}

fn max_area(dets: &[Detection]) -> f64 {
    dets.iter().map(|d| d.bbox.area()).fold(0.0, f64::max)
}

/// Merging of overlapping bounding boxes.
///
/// Output is sorted by descending score. The input is put into score order first, so any
/// permutation of detections with distinct scores gives the same result.
pub fn mob(dets: &[Detection], config: &MobConfig, score_threshold: f64) -> Vec<Detection> {
    let mut current = sorted_by_score(
        dets.iter()
            .filter(|d| d.score >= score_threshold)
            .cloned()
            .collect(),
    );
    if current.is_empty() {
        return current;
    }
    let initial_area = max_area(&current);

    for _ in 0..config.m_max.max(1) {
        let a_max = config.i_max.map(|factor| match config.area_bound {
            AreaBound::Initial => factor * initial_area,
            AreaBound::PerIteration => factor * max_area(&current),
        });
        let mut next = Vec::with_capacity(current.len());
        for cluster in cluster_overlaps(&current, config.omega) {
            let parts = match a_max {
                Some(bound) => subdivide(cluster, bound),
                None => vec![cluster],
            };
            next.extend(
                parts
                    .iter()
                    .map(|p| merge_cluster(p, config.merge_strategy, config.top_k)),
            );
        }
        let next = sorted_by_score(next);
        let settled = next == current;
        current = next;
        if settled || current.len() == 1 {
            break;
        }
    }
    current
}

/// A bounding-box aggregation method.
#[derive(Debug, Clone, PartialEq)]
pub enum Bba {
    None,
    Nms { omega: f64 },
    Mob(MobConfig),
}

impl Bba {
    /// Runs the method on one `(image_id, class_label)` group.
    pub fn apply_group(&self, dets: &[Detection], score_threshold: f64) -> Vec<Detection> {
        match self {
            Bba::None => dets
                .iter()
                .filter(|d| d.score >= score_threshold)
                .cloned()
                .collect(),
            Bba::Nms { omega } => nms(dets, *omega, score_threshold),
            Bba::Mob(config) => mob(dets, config, score_threshold),
        }
    }
}

/// Groups detections by `(image_id, class_label)` in input order.
pub fn group_detections(dets: &[Detection]) -> BTreeMap<(String, String), Vec<Detection>> {
    let mut groups: BTreeMap<(String, String), Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups
            .entry((d.image_id.clone(), d.class_label.clone()))
            .or_default()
            .push(d.clone());
    }
    groups
}

/// Applies `bba` to every `(image_id, class_label)` group of a mixed dump.
///
/// `Bba::None` only filters and keeps input order. Otherwise groups are processed in
/// parallel on the current rayon pool and concatenated in `(image_id, class_label)` order.
pub fn aggregate(dets: &[Detection], bba: &Bba, score_threshold: f64) -> Vec<Detection> {
    if let Bba::None = bba {
        return bba.apply_group(dets, score_threshold);
    }
    let groups: Vec<Vec<Detection>> = group_detections(dets).into_values().collect();
    groups
        .par_iter()
        .map(|g| bba.apply_group(g, score_threshold))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::area;
    use proptest::prelude::*;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, s: f64) -> Detection {
        Detection::new(BBox::new(x0, y0, x1, y1).unwrap(), s, "person", "img").unwrap()
    }

    fn boxes(dets: &[Detection]) -> Vec<[f64; 4]> {
        dets.iter().map(|d| d.bbox().to_array()).collect()
    }

    #[test]
    fn detection_validation() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(
            Detection::new(b, 1.5, "p", "i"),
            Err(DetectionError::InvalidScore(1.5))
        );
        assert!(Detection::new(b, f64::NAN, "p", "i").is_err());
        assert_eq!(
            Detection::new(b, 0.5, "", "i"),
            Err(DetectionError::EmptyClass)
        );
    }

    #[test]
    fn config_validation() {
        assert!(MobConfig::default().validate().is_ok());
        let bad = MobConfig {
            omega: 1.0,
            ..MobConfig::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Omega(1.0)));
        let bad = MobConfig {
            m_max: 0,
            ..MobConfig::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Iterations));
        let bad = MobConfig {
            top_k: Some(0),
            ..MobConfig::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::TopK));
    }

    #[test]
    fn nms_examples() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(1.0, 1.0, 11.0, 11.0, 0.8);
        assert!((iou(a.bbox(), b.bbox()) - 81.0 / 119.0).abs() < 1e-15);
        assert_eq!(nms(&[b.clone(), a.clone()], 0.5, 0.0), vec![a.clone()]);
        assert_eq!(nms(std::slice::from_ref(&a), 0.5, 0.0), vec![a.clone()]);
        let far = det(50.0, 50.0, 60.0, 60.0, 0.95);
        assert_eq!(
            nms(&[a.clone(), far.clone()], 0.5, 0.0),
            vec![far, a.clone()]
        );
        assert!(nms(&[], 0.5, 0.0).is_empty());
        assert!(nms(&[a], 0.5, 0.95).is_empty());
    }

    #[test]
    fn clustering_examples() {
        let dets = [
            det(0.0, 0.0, 10.0, 10.0, 0.5),
            det(20.0, 20.0, 30.0, 30.0, 0.5),
            det(5.0, 5.0, 15.0, 15.0, 0.5),
        ];
        let clusters = cluster_overlaps(&dets, 0.0);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].members(), &[dets[0].clone(), dets[2].clone()]);
        assert_eq!(clusters[1].members(), &[dets[1].clone()]);

        let same = vec![det(0.0, 0.0, 1.0, 1.0, 0.3); 4];
        assert_eq!(cluster_overlaps(&same, 0.0).len(), 1);

        // chain: 1-2 and 2-3 overlap, 1-3 disjoint
        let chain = [
            det(0.0, 0.0, 2.0, 2.0, 0.5),
            det(1.5, 0.0, 3.5, 2.0, 0.5),
            det(3.0, 0.0, 5.0, 2.0, 0.5),
        ];
        assert_eq!(iou(chain[0].bbox(), chain[2].bbox()), 0.0);
        assert_eq!(cluster_overlaps(&chain, 0.0).len(), 1);

        // touching edges do not link at omega = 0
        let touching = [det(0.0, 0.0, 1.0, 1.0, 0.5), det(1.0, 0.0, 2.0, 1.0, 0.5)];
        assert_eq!(cluster_overlaps(&touching, 0.0).len(), 2);
        assert!(cluster_overlaps(&[], 0.0).is_empty());
    }

    #[test]
    fn merge_examples() {
        let single = OverlapCluster::new(vec![det(1.0, 2.0, 3.0, 4.0, 0.7)]);
        for strategy in [MergeStrategy::Enclose, MergeStrategy::Average] {
            assert_eq!(merge_cluster(&single, strategy, None), single.members()[0]);
            assert_eq!(
                merge_cluster(&single, strategy, Some(1)),
                single.members()[0]
            );
        }

        let pair = OverlapCluster::new(vec![
            det(0.0, 0.0, 10.0, 10.0, 0.8),
            det(5.0, 5.0, 15.0, 15.0, 0.4),
        ]);
        let merged = merge_cluster(&pair, MergeStrategy::Enclose, None);
        assert_eq!(merged.bbox().to_array(), [0.0, 0.0, 15.0, 15.0]);
        assert!((merged.score() - 0.6).abs() < 1e-15);

        let pruned = merge_cluster(&pair, MergeStrategy::Enclose, Some(1));
        assert_eq!(pruned.bbox().to_array(), [0.0, 0.0, 10.0, 10.0]);
        assert_eq!(pruned.score(), 0.8);

        let avg = merge_cluster(&pair, MergeStrategy::Average, None);
        assert_eq!(avg.bbox().to_array(), [2.5, 2.5, 12.5, 12.5]);
        assert_eq!(avg.image_id(), "img");
        assert_eq!(avg.class_label(), "person");
    }

    #[test]
    fn top_k_ties_follow_member_order() {
        let c = OverlapCluster::new(vec![
            det(0.0, 0.0, 2.0, 2.0, 0.5),
            det(1.0, 1.0, 3.0, 3.0, 0.5),
            det(0.5, 0.5, 2.5, 2.5, 0.9),
        ]);
        let m = merge_cluster(&c, MergeStrategy::Enclose, Some(2));
        assert_eq!(m.bbox().to_array(), [0.0, 0.0, 2.5, 2.5]);
        assert!((m.score() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn subdivide_examples() {
        let small = OverlapCluster::new(vec![
            det(0.0, 0.0, 2.0, 2.0, 0.5),
            det(1.0, 1.0, 3.0, 3.0, 0.5),
        ]);
        assert_eq!(subdivide(small.clone(), 9.0), vec![small]);

        let far = OverlapCluster::new(vec![
            det(0.0, 0.0, 1.0, 1.0, 0.5),
            det(99.0, 0.0, 100.0, 1.0, 0.5),
        ]);
        let parts = subdivide(far.clone(), 50.0);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].members(), &far.members()[..1]);
        assert_eq!(parts[1].members(), &far.members()[1..]);

        // diagonal chain, enclosure 5x5 = 25
        let diag = OverlapCluster::new(
            (0..4)
                .map(|i| {
                    let o = i as f64;
                    det(o, o, o + 2.0, o + 2.0, 0.5)
                })
                .collect(),
        );
        assert_eq!(diag.enclosure().area(), 25.0);
        let parts = subdivide(diag.clone(), 10.0);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].members(), &diag.members()[..2]);
        assert_eq!(parts[1].members(), &diag.members()[2..]);
        for p in &parts {
            assert!(p.enclosure().area() <= 10.0);
        }
    }

    #[test]
    fn subdivide_splits_along_longer_axis() {
        // tall cluster: split by y centre even though x centres are ordered differently
        let c = OverlapCluster::new(vec![
            det(5.0, 90.0, 6.0, 100.0, 0.5),
            det(0.0, 0.0, 1.0, 10.0, 0.5),
            det(3.0, 50.0, 4.0, 60.0, 0.5),
        ]);
        let parts = subdivide(c.clone(), 250.0);
        let firsts: Vec<_> = parts.iter().map(|p| p.members().to_vec()).collect();
        // ceil(3/2) = 2 lowest by y centre, then the top box
        assert_eq!(
            firsts[0],
            vec![c.members()[1].clone(), c.members()[2].clone()]
        );
        assert!(parts.iter().all(|p| p.enclosure().area() <= 250.0));
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), 3);
    }

    #[test]
    fn subdivide_oversized_singleton_is_kept() {
        let c = OverlapCluster::new(vec![det(0.0, 0.0, 10.0, 10.0, 0.5)]);
        assert_eq!(subdivide(c.clone(), 1.0), vec![c]);
    }

    #[test]
    fn mob_dense_cluster_becomes_one_box() {
        let dets: Vec<_> = (0..12)
            .map(|i| {
                let o = (i % 4) as f64 * 15.0;
                let p = (i / 4) as f64 * 15.0;
                det(o, p, o + 60.0, p + 60.0, 0.3 + 0.05 * i as f64)
            })
            .collect();
        let out = mob(&dets, &MobConfig::default(), 0.0);
        assert_eq!(out.len(), 1);
        for d in &dets {
            assert!(out[0].bbox().contains(d.bbox()));
        }
    }

    #[test]
    fn mob_disjoint_unchanged() {
        let dets = [
            det(0.0, 0.0, 1.0, 1.0, 0.9),
            det(5.0, 5.0, 6.0, 6.0, 0.8),
            det(10.0, 0.0, 11.0, 1.0, 0.7),
        ];
        assert_eq!(mob(&dets, &MobConfig::default(), 0.0), dets.to_vec());
        assert!(mob(&[], &MobConfig::default(), 0.0).is_empty());
    }

    #[test]
    fn mob_chain_ends_in_single_box() {
        let dets = [
            det(0.0, 0.0, 4.0, 4.0, 0.9),
            det(3.0, 0.0, 7.0, 4.0, 0.8),
            det(6.0, 0.0, 10.0, 4.0, 0.7),
        ];
        let out = mob(&dets, &MobConfig::default(), 0.0);
        assert_eq!(boxes(&out), vec![[0.0, 0.0, 10.0, 4.0]]);
        assert!((out[0].score() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mob_second_pass_merges_new_overlap() {
        // (6,0,10,2) touches neither input box but overlaps their enclosure (0,0,7,7).
        let dets = [
            det(0.0, 0.0, 4.0, 4.0, 0.9),
            det(3.0, 3.0, 7.0, 7.0, 0.8),
            det(6.0, 0.0, 10.0, 2.0, 0.7),
        ];
        let cfg = MobConfig {
            i_max: None,
            ..MobConfig::default()
        };
        assert_eq!(iou(dets[1].bbox(), dets[2].bbox()), 0.0);
        assert_eq!(iou(dets[0].bbox(), dets[2].bbox()), 0.0);
        let one = mob(
            &dets,
            &MobConfig {
                m_max: 1,
                ..cfg.clone()
            },
            0.0,
        );
        assert_eq!(
            boxes(&one),
            vec![[0.0, 0.0, 7.0, 7.0], [6.0, 0.0, 10.0, 2.0]]
        );
        let full = mob(&dets, &cfg, 0.0);
        assert_eq!(boxes(&full), vec![[0.0, 0.0, 10.0, 7.0]]);
        // score is the mean of the pass-two members
        assert!((full[0].score() - (0.85 + 0.7) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mob_score_threshold_filters_first() {
        let dets = [det(0.0, 0.0, 4.0, 4.0, 0.9), det(1.0, 1.0, 5.0, 5.0, 0.1)];
        let out = mob(&dets, &MobConfig::default(), 0.5);
        assert_eq!(out, vec![dets[0].clone()]);
    }

    #[test]
    fn area_bound_modes_differ() {
        // Pass 1 is bounded by 2 * 4 = 8 in both modes. In pass 2 the per-iteration bound
        // grows with the merged boxes and allows a larger merge.
        let dets = [
            det(0.0, 0.0, 2.0, 2.0, 0.9),
            det(1.0, 0.0, 3.0, 2.0, 0.8),
            det(2.5, 0.0, 4.5, 2.0, 0.7),
            det(3.5, 0.0, 5.5, 2.0, 0.6),
        ];
        let fixed = MobConfig {
            i_max: Some(2.0),
            m_max: 5,
            ..MobConfig::default()
        };
        let growing = MobConfig {
            area_bound: AreaBound::PerIteration,
            ..fixed.clone()
        };
        let a = mob(&dets, &fixed, 0.0);
        let b = mob(&dets, &growing, 0.0);
        for d in &a {
            assert!(area(d.bbox()) <= 8.0);
        }
        assert!(b.len() < a.len());
    }

    #[test]
    fn aggregate_groups_by_image_and_class() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let c = BBox::new(1.0, 1.0, 11.0, 11.0).unwrap();
        let dets = vec![
            Detection::new(b, 0.9, "person", "b").unwrap(),
            Detection::new(c, 0.8, "person", "a").unwrap(),
            Detection::new(c, 0.7, "person", "b").unwrap(),
            Detection::new(b, 0.6, "car", "b").unwrap(),
        ];
        let out = aggregate(&dets, &Bba::Nms { omega: 0.5 }, 0.0);
        let ids: Vec<_> = out
            .iter()
            .map(|d| {
                (
                    d.image_id().to_string(),
                    d.class_label().to_string(),
                    d.score(),
                )
            })
            .collect();
        assert_eq!(
            ids,
            vec![
                ("a".into(), "person".into(), 0.8),
                ("b".into(), "car".into(), 0.6),
                ("b".into(), "person".into(), 0.9),
            ]
        );
        assert_eq!(aggregate(&dets, &Bba::None, 0.75), dets[..2].to_vec());
    }

    fn arb_dets(max: usize) -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (
                0.0..80.0f64,
                0.0..80.0f64,
                1.0..30.0f64,
                1.0..30.0f64,
                0.0..=1.0f64,
            ),
            0..max,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| det(x, y, x + w, y + h, s))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn cardinality_never_grows(dets in arb_dets(30), omega in 0.0..0.9f64) {
            prop_assert!(nms(&dets, omega, 0.0).len() <= dets.len());
            let cfg = MobConfig { omega, ..MobConfig::default() };
            prop_assert!(mob(&dets, &cfg, 0.0).len() <= dets.len());
        }

        #[test]
        fn mob_is_permutation_invariant(dets in arb_dets(20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // distinct scores
            let mut scores: Vec<f64> = dets.iter().map(|d| d.score()).collect();
            scores.sort_by(f64::total_cmp);
            prop_assume!(scores.windows(2).all(|w| w[0] != w[1]));
            let cfg = MobConfig::default();
            prop_assert_eq!(mob(&dets, &cfg, 0.0), mob(&shuffled, &cfg, 0.0));
            prop_assert_eq!(nms(&dets, 0.5, 0.0), nms(&shuffled, 0.5, 0.0));
        }

        #[test]
        fn subdivide_respects_bound(dets in arb_dets(25), factor in 1.0..10.0f64) {
            prop_assume!(!dets.is_empty());
            let a_max = factor * max_area(&dets);
            let n = dets.len();
            let parts = subdivide(OverlapCluster::new(dets), a_max);
            prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), n);
            for p in &parts {
                prop_assert!(p.enclosure().area() <= a_max);
            }
        }
    }
}
