//! Bounding-box aggregation and detection evaluation for aerial person detection.
//!
//! * [`geometry`]: boxes, IoU, Jaccard distances, enclosures, localization bounds.
//! * [`aggregation`]: greedy NMS and merging of overlapping boxes (MOB).
//! * [`matching`]: generalized ground-truth matching with VOC2012 and SAR-APD presets.
//! * [`metrics`]: precision, recall, AP, PR curves, score-threshold sweeps.
//! * [`io`]: VOC XML annotations, detection dumps, report files.
//! * [`cli`]: the `mobeval` command line.

pub mod aggregation;
pub mod cli;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod metrics;

pub use aggregation::{mob, nms, Bba, Detection, MergeStrategy, MobConfig};
pub use geometry::{iou, BBox};
pub use matching::{match_boxes_generic, match_dataset, GroundTruth, MatchSequence, SchemeParams};
pub use metrics::{MetricsReport, PrPoint};
