//! Axis-aligned box arithmetic.
//!
//! Boxes live in continuous pixel coordinates: the area of `(xmin, ymin, xmax, ymax)` is
//! `(xmax - xmin) * (ymax - ymin)` with no `+1` pixel correction. Integer VOC coordinates
//! embed losslessly.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite box coordinate in ({0}, {1}, {2}, {3})")]
    NonFinite(f64, f64, f64, f64),
    #[error("degenerate box ({0}, {1}, {2}, {3}): requires xmin < xmax and ymin < ymax")]
    Degenerate(f64, f64, f64, f64),
    #[error("no boxes")]
    Empty,
    #[error("unbounded width: IoU threshold must be positive")]
    UnboundedWidth,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Axis-aligned rectangle with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BBox::new(raw.xmin, raw.ymin, raw.xmax, raw.ymax)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            xmin: b.xmin,
            ymin: b.ymin,
            xmax: b.xmax,
            ymax: b.ymax,
        }
    }
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(GeometryError::NonFinite(xmin, ymin, xmax, ymax));
        }
        if xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::Degenerate(xmin, ymin, xmax, ymax));
        }
        Ok(BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    #[inline]
    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    #[inline]
    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    #[inline]
    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    #[inline]
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// Area of the overlap with `other`; zero when the boxes only touch.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Whether `other` lies inside `self` (boundaries inclusive).
    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin
            && self.ymin <= other.ymin
            && self.xmax >= other.xmax
            && self.ymax >= other.ymax
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<BBox, GeometryError> {
        BBox::new(
            self.xmin * factor,
            self.ymin * factor,
            self.xmax * factor,
            self.ymax * factor,
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.xmin, self.ymin, self.xmax, self.ymax
        )
    }
}

#[inline]
pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Jaccard distance `1 - IoU`.
#[inline]
pub fn jaccard_distance(a: &BBox, b: &BBox) -> f64 {
    1.0 - iou(a, b)
}

/// Symmetric pairwise Jaccard distances, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        assert!(i < self.n && k < self.n, "index out of range");
        self.entries[i * self.n + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

pub fn distance_matrix(boxes: &[BBox]) -> Result<DistanceMatrix, GeometryError> {
    if boxes.is_empty() {
        return Err(GeometryError::Empty);
    }
    let n = boxes.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for k in (i + 1)..n {
            let d = jaccard_distance(&boxes[i], &boxes[k]);
            entries[i * n + k] = d;
            entries[k * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

/// Smallest box containing every input box: component-wise minimum of the minima and
/// maximum of the maxima.
pub fn enclose<'a, I>(boxes: I) -> Result<BBox, GeometryError>
where
    I: IntoIterator<Item = &'a BBox>,
{
    let mut iter = boxes.into_iter();
    let first = *iter.next().ok_or(GeometryError::Empty)?;
    Ok(iter.fold(first, |acc, b| BBox {
        xmin: acc.xmin.min(b.xmin),
        ymin: acc.ymin.min(b.ymin),
        xmax: acc.xmax.max(b.xmax),
        ymax: acc.ymax.max(b.ymax),
    }))
}

fn check_width_args(epsilon: f64, w_avg: f64) -> Result<(), GeometryError> {
    if epsilon == 0.0 {
        return Err(GeometryError::UnboundedWidth);
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(GeometryError::InvalidArgument(format!(
            "IoU threshold {epsilon} outside (0, 1]"
        )));
    }
    if !(w_avg > 0.0 && w_avg.is_finite()) {
        return Err(GeometryError::InvalidArgument(format!(
            "average object width {w_avg} must be positive"
        )));
    }
    Ok(())
}

/// Largest square prediction width that still reaches IoU `epsilon` with a fully
/// contained square object of width `w_avg`.
pub fn max_pred_width(epsilon: f64, w_avg: f64) -> Result<f64, GeometryError> {
    check_width_args(epsilon, w_avg)?;
    Ok(w_avg / epsilon.sqrt())
}

/// Width of the square region, centred on the object, inside which a maximum-width
/// prediction can still be a true positive.
pub fn max_tp_area_width(epsilon: f64, w_avg: f64) -> Result<f64, GeometryError> {
    Ok(2.0 * max_pred_width(epsilon, w_avg)? - w_avg)
}

/// Converts a pixel length into meters. HERIDAL imagery is about 0.02 m/px, so 1200 px
/// is 24 m (often quoted loosely as "about 20 m").
pub fn pixels_to_ground(px: f64, ground_resolution: f64) -> f64 {
    px * ground_resolution
}
