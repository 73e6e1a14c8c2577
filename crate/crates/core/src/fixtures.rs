//! Synthetic aerial-search datasets for tests, benchmarks and the `gen-fixtures` command.
//!
//! Images are 4000x3000 with people of roughly 60x60 px. Each visible person draws a few
//! jittered detections; every image also gets some low-confidence clutter.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::Detection;
use crate::geometry::BBox;
use crate::io::AnnotationFile;
use crate::matching::GroundTruth;

pub const IMAGE_WIDTH: u32 = 4000;
pub const IMAGE_HEIGHT: u32 = 3000;
pub const CLASS: &str = "person";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub annotations: Vec<AnnotationFile>,
    pub detections: Vec<Detection>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<GroundTruth> {
        self.annotations
            .iter()
            .flat_map(|a| a.objects.iter().cloned())
            .collect()
    }
}

fn clamp_box(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    let (w, h) = (IMAGE_WIDTH as f64, IMAGE_HEIGHT as f64);
    BBox::new(x0.max(0.0), y0.max(0.0), x1.min(w), y1.min(h)).expect("box stays inside the frame")
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Five people standing close together with overlapping raw detections around each.
///
/// One box around the whole group scores five true positives under SAR-APD matching and
/// nothing under VOC2012.
pub fn dense_group() -> Dataset {
    let image_id = "group_0001";
    let corners = [
        (1000.0, 1000.0),
        (1050.0, 1010.0),
        (1100.0, 1000.0),
        (1020.0, 1050.0),
        (1080.0, 1055.0),
    ];
    let objects: Vec<GroundTruth> = corners
        .iter()
        .map(|&(x, y)| {
            GroundTruth::new(
                BBox::new(x, y, x + 60.0, y + 60.0).unwrap(),
                CLASS,
                image_id,
            )
            .unwrap()
        })
        .collect();
    let jitter = [(-4.0, -3.0, 0.0), (3.0, 2.0, 0.06), (0.0, 4.0, 0.12)];
    let mut detections = Vec::new();
    for (k, &(x, y)) in corners.iter().enumerate() {
        for &(dx, dy, ds) in &jitter {
            let b = BBox::new(x + dx, y + dy, x + dx + 60.0, y + dy + 58.0).unwrap();
            let score = 0.9 - 0.05 * k as f64 - ds;
            detections.push(Detection::new(b, score, CLASS, image_id).unwrap());
        }
    }
    Dataset {
        annotations: vec![AnnotationFile {
            image_id: image_id.to_string(),
            image_width: IMAGE_WIDTH,
            image_height: IMAGE_HEIGHT,
            objects,
        }],
        detections,
    }
}

/// Random dataset of `images` images (about 10 detections each).
pub fn random_dataset(images: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut annotations = Vec::with_capacity(images);
    let mut detections = Vec::new();
    for i in 0..images {
        let image_id = format!("img_{i:04}");
        let mut objects = Vec::new();
        let groups = rng.gen_range(1..=3);
        for _ in 0..groups {
            let cx = rng.gen_range(200.0..3800.0);
            let cy = rng.gen_range(200.0..2800.0);
            let members = if rng.gen_bool(0.3) {
                rng.gen_range(2..=5)
            } else {
                1
            };
            for _ in 0..members {
                let w: f64 = rng.gen_range(40.0..80.0);
                let h: f64 = rng.gen_range(40.0..80.0);
                let x = round2(cx + rng.gen_range(-70.0..70.0));
                let y = round2(cy + rng.gen_range(-70.0..70.0));
                let b = clamp_box(x, y, round2(x + w), round2(y + h));
                objects.push(GroundTruth::new(b, CLASS, image_id.as_str()).unwrap());
            }
        }
        for obj in &objects {
            if !rng.gen_bool(0.85) {
                continue;
            }
            let b = obj.bbox();
            let base: f64 = rng.gen_range(0.2..0.95);
            for _ in 0..rng.gen_range(1..=3) {
                let dx = rng.gen_range(-0.2..0.2) * b.width();
                let dy = rng.gen_range(-0.2..0.2) * b.height();
                let sw = rng.gen_range(0.8..1.25);
                let sh = rng.gen_range(0.8..1.25);
                let x0 = round2(b.xmin() + dx);
                let y0 = round2(b.ymin() + dy);
                let bb = clamp_box(
                    x0,
                    y0,
                    round2(x0 + b.width() * sw),
                    round2(y0 + b.height() * sh),
                );
                let score = round2((base + rng.gen_range(-0.15..0.15)).clamp(0.01, 1.0));
                detections.push(Detection::new(bb, score, CLASS, image_id.as_str()).unwrap());
            }
        }
        for _ in 0..rng.gen_range(0..=8) {
            let w: f64 = rng.gen_range(30.0..120.0);
            let h: f64 = rng.gen_range(30.0..120.0);
            let x = round2(rng.gen_range(0.0..(IMAGE_WIDTH as f64 - w)));
            let y = round2(rng.gen_range(0.0..(IMAGE_HEIGHT as f64 - h)));
            let b = clamp_box(x, y, round2(x + w), round2(y + h));
            let score = round2(rng.gen_range(0.01..0.6));
            detections.push(Detection::new(b, score, CLASS, image_id.as_str()).unwrap());
        }
        annotations.push(AnnotationFile {
            image_id,
            image_width: IMAGE_WIDTH,
            image_height: IMAGE_HEIGHT,
            objects,
        });
    }
    Dataset {
        annotations,
        detections,
    }
}
