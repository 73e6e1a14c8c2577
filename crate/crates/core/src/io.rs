//! File formats: PASCAL VOC XML annotations, detection dumps and report files.
//!
//! Detection dumps are JSON lines or CSV with the fields
//! `image_id,class,score,xmin,ymin,xmax,ymax`. Coordinates are used as written, with the
//! continuous area convention (no VOC `-1` adjustment). Detection coordinates are written
//! with the shortest representation that reads back to the same `f64`; report values are
//! rounded to 6 significant digits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{Detection, DetectionError};
use crate::geometry::BBox;
use crate::matching::GroundTruth;
use crate::metrics::{MetricsReport, PrPoint, SweepRow};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("xml parse error at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("{element} (line {line}): missing field `{field}`")]
    MissingField {
        element: String,
        field: String,
        line: u32,
    },
    #[error("{element} (line {line}): invalid number {value:?} for `{field}`")]
    InvalidNumber {
        element: String,
        field: String,
        value: String,
        line: u32,
    },
    #[error("{element} (line {line}): degenerate box: {message}")]
    Degenerate {
        element: String,
        line: u32,
        message: String,
    },
    #[error("{element} (line {line}): box {bbox} outside image {width}x{height}")]
    OutOfBounds {
        element: String,
        line: u32,
        bbox: BBox,
        width: u32,
        height: u32,
    },
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl FormatError {
    fn record(record: usize, message: impl ToString) -> Self {
        FormatError::Record {
            record,
            message: message.to_string(),
        }
    }
}

/// One parsed VOC annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub objects: Vec<GroundTruth>,
}

fn line_of(doc: &roxmltree::Document, node: roxmltree::Node) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn child<'a, 'input>(
    node: roxmltree::Node<'a, 'input>,
    name: &str,
) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).map(|c| c.text().unwrap_or("").trim())
}

struct Ctx<'d, 'input> {
    doc: &'d roxmltree::Document<'input>,
    element: String,
    node: roxmltree::Node<'d, 'input>,
}

impl Ctx<'_, '_> {
    fn line(&self) -> u32 {
        line_of(self.doc, self.node)
    }

    fn missing(&self, field: &str) -> FormatError {
        FormatError::MissingField {
            element: self.element.clone(),
            field: field.to_string(),
            line: self.line(),
        }
    }

    fn number(&self, field: &str) -> Result<f64, FormatError> {
        let text = child_text(self.node, field).ok_or_else(|| self.missing(field))?;
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(FormatError::InvalidNumber {
                element: self.element.clone(),
                field: field.to_string(),
                value: text.to_string(),
                line: self.line(),
            }),
        }
    }

    fn dimension(&self, field: &str) -> Result<u32, FormatError> {
        let v = self.number(field)?;
        if v <= 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(FormatError::InvalidNumber {
                element: self.element.clone(),
                field: field.to_string(),
                value: child_text(self.node, field).unwrap_or("").to_string(),
                line: self.line(),
            });
        }
        Ok(v as u32)
    }
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

static WARNED_ELEMENTS: Mutex<BTreeSet<String>> = Mutex::new(BTreeSet::new());

const KNOWN_ANNOTATION: &[&str] = &["filename", "size", "object"];
const KNOWN_OBJECT: &[&str] = &["name", "bndbox"];

/// Parses a VOC XML annotation. The image id is the stem of `<filename>` when present;
/// [`read_annotation_file`] replaces it with the stem of the XML file name.
pub fn parse_voc_xml(content: &str) -> Result<AnnotationFile, FormatError> {
    let doc = roxmltree::Document::parse(content).map_err(|e| {
        let pos = e.pos();
        FormatError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    let mut ignored = BTreeSet::new();
    for c in root.children().filter(|c| c.is_element()) {
        if !KNOWN_ANNOTATION.contains(&c.tag_name().name()) {
            ignored.insert(c.tag_name().name().to_string());
        }
    }

    let image_id = child_text(root, "filename").map(stem).unwrap_or_default();
    let size = child(root, "size").ok_or_else(|| FormatError::MissingField {
        element: root.tag_name().name().to_string(),
        field: "size".into(),
        line: line_of(&doc, root),
    })?;
    let size_ctx = Ctx {
        doc: &doc,
        element: "size".into(),
        node: size,
    };
    let width = size_ctx.dimension("width")?;
    let height = size_ctx.dimension("height")?;
    let frame = BBox::new(0.0, 0.0, width as f64, height as f64).expect("positive size");

    let mut objects = Vec::new();
    for (idx, obj) in root
        .children()
        .filter(|c| c.has_tag_name("object"))
        .enumerate()
    {
        let obj_ctx = Ctx {
            doc: &doc,
            element: format!("object[{idx}]"),
            node: obj,
        };
        for c in obj.children().filter(|c| c.is_element()) {
            if !KNOWN_OBJECT.contains(&c.tag_name().name()) {
                ignored.insert(format!("object/{}", c.tag_name().name()));
            }
        }
        let name = child_text(obj, "name")
            .filter(|n| !n.is_empty())
            .ok_or_else(|| obj_ctx.missing("name"))?;
        let bndbox = child(obj, "bndbox").ok_or_else(|| obj_ctx.missing("bndbox"))?;
        let ctx = Ctx {
            doc: &doc,
            element: format!("object[{idx}]/bndbox"),
            node: bndbox,
        };
        let (xmin, ymin, xmax, ymax) = (
            ctx.number("xmin")?,
            ctx.number("ymin")?,
            ctx.number("xmax")?,
            ctx.number("ymax")?,
        );
        let bbox = BBox::new(xmin, ymin, xmax, ymax).map_err(|e| FormatError::Degenerate {
            element: ctx.element.clone(),
            line: ctx.line(),
            message: e.to_string(),
        })?;
        if !frame.contains(&bbox) {
            return Err(FormatError::OutOfBounds {
                element: ctx.element.clone(),
                line: ctx.line(),
                bbox,
                width,
                height,
            });
        }
        objects.push(GroundTruth::new(bbox, name, image_id.clone()).expect("name is non-empty"));
    }
    // once per element name per process, so a whole dataset of HERIDAL files stays quiet
    let fresh: Vec<String> = {
        let mut seen = WARNED_ELEMENTS.lock().unwrap_or_else(|e| e.into_inner());
        ignored
            .into_iter()
            .filter(|n| seen.insert(n.clone()))
            .collect()
    };
    if !fresh.is_empty() {
        log::warn!(
            "annotation {image_id:?}: ignoring elements {}",
            fresh.join(", ")
        );
    }
    Ok(AnnotationFile {
        image_id,
        image_width: width,
        image_height: height,
        objects,
    })
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads one annotation; the image id is the file stem.
pub fn read_annotation_file(path: &Path) -> Result<AnnotationFile, FormatError> {
    let mut ann = parse_voc_xml(&read_text(path)?)?;
    ann.image_id = stem(&path.to_string_lossy());
    for obj in &mut ann.objects {
        obj.set_image_id(&ann.image_id);
    }
    Ok(ann)
}

/// Reads every `*.xml` file of a directory, sorted by image id.
pub fn read_annotation_dir(dir: &Path) -> Result<Vec<AnnotationFile>, FormatError> {
    let io_err = |source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    let mut files = paths
        .iter()
        .map(|p| read_annotation_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    files.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(files)
}

/// Writes a VOC annotation in the layout HERIDAL uses.
pub fn write_voc_xml(ann: &AnnotationFile, filename: &str) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    let _ = writeln!(s, "\t<filename>{}</filename>", xml_escape(filename));
    let _ = writeln!(
        s,
        "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>3</depth>\n\t</size>",
        ann.image_width, ann.image_height
    );
    for obj in &ann.objects {
        let b = obj.bbox();
        let _ = writeln!(
            s,
            "\t<object>\n\t\t<name>{}</name>\n\t\t<pose>Unspecified</pose>\n\t\t<truncated>0</truncated>\n\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>",
            xml_escape(obj.class_label()),
            b.xmin(),
            b.ymin(),
            b.xmax(),
            b.ymax()
        );
    }
    s.push_str("</annotation>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFormat {
    Jsonl,
    Csv,
}

impl DetectionFormat {
    /// `.csv` is CSV; anything else is JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension() {
            Some(e) if e.eq_ignore_ascii_case("csv") => DetectionFormat::Csv,
            _ => DetectionFormat::Jsonl,
        }
    }
}

const DETECTION_FIELDS: [&str; 7] = ["image_id", "class", "score", "xmin", "ymin", "xmax", "ymax"];

#[derive(Serialize)]
struct DetectionRecord<'a> {
    image_id: &'a str,
    class: &'a str,
    score: f64,
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl<'a> From<&'a Detection> for DetectionRecord<'a> {
    fn from(d: &'a Detection) -> Self {
        let b = d.bbox();
        DetectionRecord {
            image_id: d.image_id(),
            class: d.class_label(),
            score: d.score(),
            xmin: b.xmin(),
            ymin: b.ymin(),
            xmax: b.xmax(),
            ymax: b.ymax(),
        }
    }
}

fn build_detection(
    record: usize,
    image_id: String,
    class: String,
    nums: [f64; 5],
) -> Result<Detection, FormatError> {
    let [score, xmin, ymin, xmax, ymax] = nums;
    let bbox = BBox::new(xmin, ymin, xmax, ymax).map_err(|e| FormatError::record(record, e))?;
    Detection::new(bbox, score, class, image_id)
        .map_err(|e: DetectionError| FormatError::record(record, e))
}

/// Parses a detection dump. Records are numbered from 1 in error messages.
pub fn read_detections(
    content: &str,
    format: DetectionFormat,
) -> Result<Vec<Detection>, FormatError> {
    match format {
        DetectionFormat::Jsonl => read_jsonl(content),
        DetectionFormat::Csv => read_csv(content),
    }
}

fn read_jsonl(content: &str) -> Result<Vec<Detection>, FormatError> {
    let mut out = Vec::new();
    let mut ignored = BTreeSet::new();
    for (i, line) in content.lines().enumerate() {
        let record = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| FormatError::record(record, e))?;
        let obj = value
            .as_object()
            .ok_or_else(|| FormatError::record(record, "expected a JSON object"))?;
        for key in obj.keys() {
            if !DETECTION_FIELDS.contains(&key.as_str()) {
                ignored.insert(key.clone());
            }
        }
        let text = |k: &str| -> Result<String, FormatError> {
            match obj.get(k) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                Some(_) => Err(FormatError::record(
                    record,
                    format!("field `{k}` must be a string"),
                )),
                None => Err(FormatError::record(record, format!("missing field `{k}`"))),
            }
        };
        let num = |k: &str| -> Result<f64, FormatError> {
            obj.get(k)
                .ok_or_else(|| FormatError::record(record, format!("missing field `{k}`")))?
                .as_f64()
                .ok_or_else(|| FormatError::record(record, format!("field `{k}` must be a number")))
        };
        out.push(build_detection(
            record,
            text("image_id")?,
            text("class")?,
            [
                num("score")?,
                num("xmin")?,
                num("ymin")?,
                num("xmax")?,
                num("ymax")?,
            ],
        )?);
    }
    if !ignored.is_empty() {
        log::warn!(
            "detections: ignoring unknown fields {}",
            ignored.into_iter().collect::<Vec<_>>().join(", ")
        );
    }
    Ok(out)
}

fn read_csv(content: &str) -> Result<Vec<Detection>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| FormatError::record(0, e))?
        .clone();
    let mut columns = [0usize; 7];
    for (slot, field) in columns.iter_mut().zip(DETECTION_FIELDS) {
        *slot = headers
            .iter()
            .position(|h| h == field)
            .ok_or_else(|| FormatError::record(0, format!("missing column `{field}`")))?;
    }
    let unknown: Vec<_> = headers
        .iter()
        .filter(|h| !DETECTION_FIELDS.contains(h))
        .collect();
    if !unknown.is_empty() {
        log::warn!(
            "detections: ignoring unknown columns {}",
            unknown.join(", ")
        );
    }

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| FormatError::record(record, e))?;
        let get = |c: usize| row.get(columns[c]).unwrap_or("");
        let mut nums = [0.0; 5];
        for (k, slot) in nums.iter_mut().enumerate() {
            let raw = get(k + 2);
            *slot = raw.parse().map_err(|_| {
                FormatError::record(
                    record,
                    format!("invalid number {raw:?} for `{}`", DETECTION_FIELDS[k + 2]),
                )
            })?;
        }
        out.push(build_detection(
            record,
            get(0).to_string(),
            get(1).to_string(),
            nums,
        )?);
    }
    Ok(out)
}

pub fn write_detections(dets: &[Detection], format: DetectionFormat) -> String {
    match format {
        DetectionFormat::Jsonl => {
            let mut s = String::new();
            for d in dets {
                s.push_str(
                    &serde_json::to_string(&DetectionRecord::from(d)).expect("serializable"),
                );
                s.push('\n');
            }
            s
        }
        DetectionFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(DETECTION_FIELDS).expect("in-memory write");
            for d in dets {
                let r = DetectionRecord::from(d);
                w.write_record([
                    r.image_id.to_string(),
                    r.class.to_string(),
                    r.score.to_string(),
                    r.xmin.to_string(),
                    r.ymin.to_string(),
                    r.xmax.to_string(),
                    r.ymax.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// A PR curve together with the AP computed from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurveReport {
    pub average_precision: f64,
    pub points: Vec<PrPoint>,
}

/// Anything `write_report` can serialize.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Metrics(MetricsReport),
    Sweep(Vec<SweepRow>),
    Curve(PrCurveReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Metrics,
    Sweep,
    Curve,
}

/// Rounds to 6 significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn fmt6(v: f64) -> String {
    round_sig6(v).to_string()
}

impl Report {
    fn rounded(&self) -> Report {
        match self {
            Report::Metrics(m) => Report::Metrics(MetricsReport {
                precision: round_sig6(m.precision),
                recall: round_sig6(m.recall),
                average_precision: round_sig6(m.average_precision),
                avg_time_per_image_s: m.avg_time_per_image_s.map(round_sig6),
                ..m.clone()
            }),
            Report::Sweep(rows) => Report::Sweep(
                rows.iter()
                    .map(|r| SweepRow {
                        score_threshold: round_sig6(r.score_threshold),
                        precision: round_sig6(r.precision),
                        recall: round_sig6(r.recall),
                        average_precision: round_sig6(r.average_precision),
                    })
                    .collect(),
            ),
            Report::Curve(c) => Report::Curve(PrCurveReport {
                average_precision: round_sig6(c.average_precision),
                points: c
                    .points
                    .iter()
                    .map(|p| PrPoint {
                        recall: round_sig6(p.recall),
                        precision: round_sig6(p.precision),
                        score_cutoff: round_sig6(p.score_cutoff),
                    })
                    .collect(),
            }),
        }
    }
}

const METRICS_COLUMNS: [&str; 7] = [
    "precision",
    "recall",
    "average_precision",
    "true_positives",
    "false_positives",
    "false_negatives",
    "avg_time_per_image_s",
];
const SWEEP_COLUMNS: [&str; 4] = [
    "score_threshold",
    "precision",
    "recall",
    "average_precision",
];
const CURVE_COLUMNS: [&str; 3] = ["recall", "precision", "score_cutoff"];

/// Serializes a report. JSON is pretty-printed with a trailing newline; CSV always has a
/// header row. The PR-curve CSV holds only the points.
pub fn write_report(report: &Report, format: ReportFormat) -> String {
    let report = report.rounded();
    match format {
        ReportFormat::Json => {
            let mut s = match &report {
                Report::Metrics(m) => serde_json::to_string_pretty(m),
                Report::Sweep(rows) => serde_json::to_string_pretty(rows),
                Report::Curve(c) => serde_json::to_string_pretty(c),
            }
            .expect("serializable");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            match &report {
                Report::Metrics(m) => {
                    w.write_record(METRICS_COLUMNS).expect("in-memory write");
                    w.write_record([
                        fmt6(m.precision),
                        fmt6(m.recall),
                        fmt6(m.average_precision),
                        m.true_positives.to_string(),
                        m.false_positives.to_string(),
                        m.false_negatives.to_string(),
                        m.avg_time_per_image_s.map(fmt6).unwrap_or_default(),
                    ])
                    .expect("in-memory write");
                }
                Report::Sweep(rows) => {
                    w.write_record(SWEEP_COLUMNS).expect("in-memory write");
                    for r in rows {
                        w.write_record([
                            fmt6(r.score_threshold),
                            fmt6(r.precision),
                            fmt6(r.recall),
                            fmt6(r.average_precision),
                        ])
                        .expect("in-memory write");
                    }
                }
                Report::Curve(c) => {
                    w.write_record(CURVE_COLUMNS).expect("in-memory write");
                    for p in &c.points {
                        w.write_record([fmt6(p.recall), fmt6(p.precision), fmt6(p.score_cutoff)])
                            .expect("in-memory write");
                    }
                }
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
    }
}

/// Reads a report written by [`write_report`]. A PR curve read from CSV gets its AP
/// recomputed from the points.
pub fn read_report(
    content: &str,
    kind: ReportKind,
    format: ReportFormat,
) -> Result<Report, FormatError> {
    match format {
        ReportFormat::Json => {
            let err = |e: serde_json::Error| FormatError::record(e.line(), e);
            Ok(match kind {
                ReportKind::Metrics => Report::Metrics(serde_json::from_str(content).map_err(err)?),
                ReportKind::Sweep => Report::Sweep(serde_json::from_str(content).map_err(err)?),
                ReportKind::Curve => Report::Curve(serde_json::from_str(content).map_err(err)?),
            })
        }
        ReportFormat::Csv => {
            let mut reader = csv::Reader::from_reader(content.as_bytes());
            let rows: Vec<csv::StringRecord> = reader
                .records()
                .collect::<Result<_, _>>()
                .map_err(|e| FormatError::record(0, e))?;
            let num =
                |row: &csv::StringRecord, i: usize, record: usize| -> Result<f64, FormatError> {
                    let raw = row.get(i).unwrap_or("");
                    raw.parse()
                        .map_err(|_| FormatError::record(record, format!("invalid number {raw:?}")))
                };
            let count =
                |row: &csv::StringRecord, i: usize, record: usize| -> Result<usize, FormatError> {
                    let raw = row.get(i).unwrap_or("");
                    raw.parse()
                        .map_err(|_| FormatError::record(record, format!("invalid count {raw:?}")))
                };
            Ok(match kind {
                ReportKind::Metrics => {
                    let row = rows
                        .first()
                        .ok_or_else(|| FormatError::record(1, "missing metrics row"))?;
                    let time = row.get(6).unwrap_or("");
                    Report::Metrics(MetricsReport {
                        precision: num(row, 0, 1)?,
                        recall: num(row, 1, 1)?,
                        average_precision: num(row, 2, 1)?,
                        true_positives: count(row, 3, 1)?,
                        false_positives: count(row, 4, 1)?,
                        false_negatives: count(row, 5, 1)?,
                        avg_time_per_image_s: if time.is_empty() {
                            None
                        } else {
                            Some(num(row, 6, 1)?)
                        },
                    })
                }
                ReportKind::Sweep => Report::Sweep(
                    rows.iter()
                        .enumerate()
                        .map(|(i, r)| {
                            Ok(SweepRow {
                                score_threshold: num(r, 0, i + 1)?,
                                precision: num(r, 1, i + 1)?,
                                recall: num(r, 2, i + 1)?,
                                average_precision: num(r, 3, i + 1)?,
                            })
                        })
                        .collect::<Result<_, FormatError>>()?,
                ),
                ReportKind::Curve => {
                    let points: Vec<PrPoint> = rows
                        .iter()
                        .enumerate()
                        .map(|(i, r)| {
                            Ok(PrPoint {
                                recall: num(r, 0, i + 1)?,
                                precision: num(r, 1, i + 1)?,
                                score_cutoff: num(r, 2, i + 1)?,
                            })
                        })
                        .collect::<Result<_, FormatError>>()?;
                    Report::Curve(PrCurveReport {
                        average_precision: crate::metrics::average_precision(&points),
                        points,
                    })
                }
            })
        }
    }
}
