//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors (including unreadable
//! inputs), 1 for runtime failures. Errors are printed to stderr as a single line of the
//! form `mobeval: error[<kind>]: <message>`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregation::{aggregate, AreaBound, Bba, Detection, MergeStrategy, MobConfig};
use crate::fixtures;
use crate::io::{
    read_annotation_dir, read_detections, write_detections, write_report, write_voc_xml,
    AnnotationFile, DetectionFormat, FormatError, PrCurveReport, Report, ReportFormat,
};
use crate::matching::{match_dataset, GroundTruth, SchemeParams};
use crate::metrics::{
    average_precision, default_thresholds, pr_curve, precision_envelope, round_grid,
    threshold_sweep, MetricsReport,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn line(&self) -> String {
        match self {
            CliError::Usage(m) => format!("mobeval: error[usage]: {m}"),
            CliError::Runtime(m) => format!("mobeval: error[runtime]: {m}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl ToString) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "mobeval",
    version,
    about = "Aggregate detector boxes (NMS / MOB) and score them under VOC2012 or SAR-APD matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply box aggregation to a detection dump.
    Aggregate(AggregateArgs),
    /// Aggregate, match against VOC annotations and report PRC/RCL/AP.
    Evaluate(EvaluateArgs),
    /// Evaluate over a grid of score thresholds.
    Sweep(SweepArgs),
    /// Emit the precision-recall curve.
    PrCurve(CurveArgs),
    /// Write a synthetic dataset (VOC labels + detection dump).
    GenFixtures(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeName {
    Voc2012,
    SarApd,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BbaName {
    None,
    Nms,
    Mob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyName {
    Enclose,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AreaBoundName {
    Initial,
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatName {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FixtureKind {
    Random,
    DenseGroup,
}

#[derive(Debug, Args)]
struct BbaArgs {
    /// Aggregation method.
    #[arg(long, value_enum, default_value = "mob")]
    bba: BbaName,
    /// Score threshold t_s applied before aggregation [default: 0.25 for nms, 0.05 for mob, 0 for none].
    #[arg(long)]
    score_threshold: Option<f64>,
    /// NMS suppression IoU [default: 0.5].
    #[arg(long)]
    nms_iou: Option<f64>,
    /// MOB linking IoU [default: 0].
    #[arg(long)]
    mob_iou: Option<f64>,
    /// Maximum MOB iterations [default: 3].
    #[arg(long)]
    mob_iters: Option<usize>,
    /// Maximum inflation factor, or `inf` [default: 100].
    #[arg(long)]
    mob_inflation: Option<String>,
    /// Keep only the k best boxes of each cluster before merging.
    #[arg(long)]
    mob_top_k: Option<usize>,
    #[arg(long, value_enum)]
    mob_strategy: Option<StrategyName>,
    /// Box set the inflation bound is measured on [default: initial].
    #[arg(long, value_enum)]
    mob_area_bound: Option<AreaBoundName>,
}

#[derive(Debug, Args)]
struct SchemeArgs {
    #[arg(long, value_enum, default_value = "sar-apd")]
    scheme: SchemeName,
    /// Matching IoU threshold (overrides the preset).
    #[arg(long)]
    eps: Option<f64>,
    /// Maximum labels per prediction, or `inf` (overrides the preset).
    #[arg(long)]
    gmax: Option<String>,
    /// Minimum prediction/label area ratio (overrides the preset).
    #[arg(long)]
    amin: Option<f64>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum)]
    format: Option<FormatName>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Detection dump (`.csv` or JSON lines).
    #[arg(long)]
    detections: PathBuf,
    #[command(flatten)]
    bba: BbaArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct EvalInputs {
    /// Directory of VOC XML annotations.
    #[arg(long)]
    gt_dir: PathBuf,
    /// Detection dump (`.csv` or JSON lines).
    #[arg(long)]
    detections: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    bba: BbaArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: EvalInputs,
    /// Include the measured average time per image in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: EvalInputs,
    /// Threshold grid `lo:hi:step` [default: 0.05:0.5:0.05].
    #[arg(long)]
    thresholds: Option<String>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    inputs: EvalInputs,
    /// Emit envelope-interpolated precision.
    #[arg(long)]
    envelope: bool,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    kind: FixtureKind,
    #[arg(long, default_value_t = 101)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Detection dump format.
    #[arg(long, value_enum, default_value = "json")]
    format: FormatName,
}

fn parse_unbounded<T: std::str::FromStr>(raw: &str) -> Option<Option<T>> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "none" | "unbounded" => Some(None),
        s => s.parse().ok().map(Some),
    }
}

impl BbaArgs {
    fn resolve(&self) -> Result<(Bba, f64), CliError> {
        let mob_flags = self.mob_iou.is_some()
            || self.mob_iters.is_some()
            || self.mob_inflation.is_some()
            || self.mob_top_k.is_some()
            || self.mob_strategy.is_some()
            || self.mob_area_bound.is_some();
        if mob_flags && self.bba != BbaName::Mob {
            return Err(usage("--mob-* options require --bba mob"));
        }
        if self.nms_iou.is_some() && self.bba != BbaName::Nms {
            return Err(usage("--nms-iou requires --bba nms"));
        }
        let (bba, default_ts) = match self.bba {
            BbaName::None => (Bba::None, 0.0),
            BbaName::Nms => {
                let omega = self.nms_iou.unwrap_or(0.5);
                if !(0.0..=1.0).contains(&omega) {
                    return Err(usage(format!("--nms-iou {omega} outside [0, 1]")));
                }
                (Bba::Nms { omega }, 0.25)
            }
            BbaName::Mob => {
                let defaults = MobConfig::default();
                let i_max = match &self.mob_inflation {
                    None => defaults.i_max,
                    Some(raw) => parse_unbounded::<f64>(raw)
                        .ok_or_else(|| usage(format!("invalid --mob-inflation {raw:?}")))?,
                };
                let config = MobConfig {
                    omega: self.mob_iou.unwrap_or(defaults.omega),
                    m_max: self.mob_iters.unwrap_or(defaults.m_max),
                    i_max,
                    top_k: self.mob_top_k,
                    merge_strategy: match self.mob_strategy {
                        Some(StrategyName::Average) => MergeStrategy::Average,
                        _ => MergeStrategy::Enclose,
                    },
                    area_bound: match self.mob_area_bound {
                        Some(AreaBoundName::PerIteration) => AreaBound::PerIteration,
                        _ => AreaBound::Initial,
                    },
                };
                config.validate().map_err(|e| usage(e.to_string()))?;
                (Bba::Mob(config), 0.05)
            }
        };
        let t_s = self.score_threshold.unwrap_or(default_ts);
        if !(0.0..=1.0).contains(&t_s) {
            return Err(usage(format!("--score-threshold {t_s} outside [0, 1]")));
        }
        Ok((bba, t_s))
    }
}

impl SchemeArgs {
    fn resolve(&self) -> Result<SchemeParams, CliError> {
        let base = match self.scheme {
            SchemeName::Voc2012 => SchemeParams::voc2012(),
            SchemeName::SarApd => SchemeParams::sar_apd(),
            SchemeName::Custom => {
                if self.eps.is_none() || self.gmax.is_none() || self.amin.is_none() {
                    return Err(usage("--scheme custom requires --eps, --gmax and --amin"));
                }
                SchemeParams::voc2012()
            }
        };
        let g_max = match &self.gmax {
            None => base.g_max,
            Some(raw) => parse_unbounded::<usize>(raw)
                .ok_or_else(|| usage(format!("invalid --gmax {raw:?}")))?,
        };
        SchemeParams::new(
            self.eps.unwrap_or(base.epsilon),
            g_max,
            self.amin.unwrap_or(base.a_min),
        )
        .map_err(|e| usage(e.to_string()))
    }
}

fn report_format(f: Option<FormatName>) -> ReportFormat {
    match f {
        Some(FormatName::Csv) => ReportFormat::Csv,
        _ => ReportFormat::Json,
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn load_detections(path: &Path) -> Result<(String, DetectionFormat, Vec<Detection>), CliError> {
    let content = read_input(path)?;
    let format = DetectionFormat::from_path(path);
    let dets = read_detections(&content, format)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok((content, format, dets))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(runtime)?;
    Ok(pool.install(f))
}

fn emit(out: &OutputArgs, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &out.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(runtime),
    }
}

/// Keeps the records of a dump scoring at least `t_s`, byte for byte.
fn filter_dump(
    content: &str,
    format: DetectionFormat,
    dets: &[Detection],
    t_s: f64,
) -> Result<String, CliError> {
    let mut out = String::with_capacity(content.len());
    match format {
        DetectionFormat::Jsonl => {
            let lines = content
                .split_inclusive('\n')
                .filter(|l| !l.trim().is_empty());
            for (line, det) in lines.zip(dets) {
                if det.score() >= t_s {
                    out.push_str(line);
                }
            }
        }
        DetectionFormat::Csv => {
            let mut reader = csv::Reader::from_reader(content.as_bytes());
            reader.headers().map_err(runtime)?;
            let mut starts = Vec::with_capacity(dets.len() + 1);
            let mut record = csv::StringRecord::new();
            loop {
                let pos = reader.position().byte() as usize;
                if !reader.read_record(&mut record).map_err(runtime)? {
                    break;
                }
                starts.push(pos);
            }
            let header_end = starts.first().copied().unwrap_or(content.len());
            out.push_str(&content[..header_end]);
            starts.push(content.len());
            for (w, det) in starts.windows(2).zip(dets) {
                if det.score() >= t_s {
                    out.push_str(&content[w[0]..w[1]]);
                }
            }
        }
    }
    Ok(out)
}

fn cmd_aggregate(
    args: &AggregateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let (bba, t_s) = args.bba.resolve()?;
    let (content, in_format, dets) = load_detections(&args.detections)?;
    let out_format = match args.out.format {
        None => in_format,
        Some(FormatName::Csv) => DetectionFormat::Csv,
        Some(FormatName::Json) => DetectionFormat::Jsonl,
    };
    let aggregated = with_pool(args.out.jobs, || aggregate(&dets, &bba, t_s))?;

    let text = if bba == Bba::None && out_format == in_format {
        filter_dump(&content, in_format, &dets, t_s)?
    } else {
        write_detections(&aggregated, out_format)
    };

    let ids: BTreeSet<&str> = dets.iter().map(|d| d.image_id()).collect();
    for id in ids {
        let before = dets.iter().filter(|d| d.image_id() == id).count();
        let after = aggregated.iter().filter(|d| d.image_id() == id).count();
        let _ = writeln!(stderr, "{id}\t{before}\t{after}");
    }
    emit(&args.out, &text, stdout)
}

struct Loaded {
    scheme: SchemeParams,
    bba: Bba,
    t_s: f64,
    labels: Vec<GroundTruth>,
    detections: Vec<Detection>,
    images: usize,
}

fn load_eval(inputs: &EvalInputs, stderr: &mut dyn Write) -> Result<Loaded, CliError> {
    let scheme = inputs.scheme.resolve()?;
    let (bba, t_s) = inputs.bba.resolve()?;
    if !inputs.gt_dir.is_dir() {
        return Err(usage(format!(
            "{} is not a directory",
            inputs.gt_dir.display()
        )));
    }
    let annotations: Vec<AnnotationFile> =
        read_annotation_dir(&inputs.gt_dir).map_err(|e| match e {
            FormatError::Io { .. } => usage(e.to_string()),
            _ => runtime(e.to_string()),
        })?;
    if annotations.is_empty() {
        return Err(usage(format!(
            "no VOC annotations found in {}",
            inputs.gt_dir.display()
        )));
    }
    let (_, _, detections) = load_detections(&inputs.detections)?;

    let mut known: BTreeSet<&str> = annotations.iter().map(|a| a.image_id.as_str()).collect();
    let unknown: BTreeSet<&str> = detections
        .iter()
        .map(|d| d.image_id())
        .filter(|id| !known.contains(id))
        .collect();
    for id in &unknown {
        let _ = writeln!(
            stderr,
            "mobeval: warning: detections for image {id:?} have no annotation; treating it as having no objects"
        );
    }
    known.extend(unknown);
    let images = known.len();
    let labels = annotations.into_iter().flat_map(|a| a.objects).collect();
    Ok(Loaded {
        scheme,
        bba,
        t_s,
        labels,
        detections,
        images,
    })
}

fn cmd_evaluate(
    args: &EvaluateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let run = load_eval(&args.inputs, stderr)?;
    let started = Instant::now();
    let seq = with_pool(args.inputs.out.jobs, || {
        let aggregated = aggregate(&run.detections, &run.bba, run.t_s);
        match_dataset(&aggregated, &run.labels, &run.scheme)
    })?;
    let per_image = started.elapsed().as_secs_f64() / run.images.max(1) as f64;
    let report = MetricsReport::from_sequence(&seq, args.timing.then_some(per_image));
    let _ = writeln!(
        stderr,
        "images={} predictions={} TP={} FP={} FN={} time_per_image_s={per_image:.6}",
        run.images,
        seq.len(),
        report.true_positives,
        report.false_positives,
        report.false_negatives
    );
    let text = write_report(
        &Report::Metrics(report),
        report_format(args.inputs.out.format),
    );
    emit(&args.inputs.out, &text, stdout)
}

fn parse_grid(raw: &str) -> Result<Vec<f64>, CliError> {
    let bad = || usage(format!("invalid --thresholds {raw:?}: expected lo:hi:step"));
    let parts: Vec<f64> = raw
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [lo, hi, step] = parts[..] else {
        return Err(bad());
    };
    if !(0.0..=1.0).contains(&lo)
        || !(0.0..=1.0).contains(&hi)
        || lo > hi
        || step.is_nan()
        || step <= 0.0
    {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| round_grid(lo + i as f64 * step))
        .collect())
}

fn cmd_sweep(
    args: &SweepArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    if args.inputs.bba.score_threshold.is_some() {
        return Err(usage(
            "--score-threshold conflicts with --thresholds; sweep sets t_s per row",
        ));
    }
    let thresholds = match &args.thresholds {
        Some(raw) => parse_grid(raw)?,
        None => default_thresholds(),
    };
    let run = load_eval(&args.inputs, stderr)?;
    let rows = with_pool(args.inputs.out.jobs, || {
        threshold_sweep(
            &run.detections,
            &run.labels,
            &run.scheme,
            &run.bba,
            &thresholds,
        )
    })?;
    let text = write_report(&Report::Sweep(rows), report_format(args.inputs.out.format));
    emit(&args.inputs.out, &text, stdout)
}

fn cmd_pr_curve(
    args: &CurveArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let run = load_eval(&args.inputs, stderr)?;
    let seq = with_pool(args.inputs.out.jobs, || {
        match_dataset(
            &aggregate(&run.detections, &run.bba, run.t_s),
            &run.labels,
            &run.scheme,
        )
    })?;
    let raw = pr_curve(&seq);
    let ap = average_precision(&raw);
    let points = if args.envelope {
        precision_envelope(&raw)
    } else {
        raw
    };
    let _ = writeln!(stderr, "points={} AP={ap:.6}", points.len());
    let report = Report::Curve(PrCurveReport {
        average_precision: ap,
        points,
    });
    let text = write_report(&report, report_format(args.inputs.out.format));
    emit(&args.inputs.out, &text, stdout)
}

fn cmd_gen_fixtures(args: &GenArgs, stderr: &mut dyn Write) -> Result<(), CliError> {
    let data = match args.kind {
        FixtureKind::Random => fixtures::random_dataset(args.images, args.seed),
        FixtureKind::DenseGroup => fixtures::dense_group(),
    };
    let labels_dir = args.out_dir.join("labels");
    fs::create_dir_all(&labels_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", labels_dir.display())))?;
    for ann in &data.annotations {
        let name = format!("{}.JPG", ann.image_id);
        let path = labels_dir.join(format!("{}.xml", ann.image_id));
        fs::write(&path, write_voc_xml(ann, &name))
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    let (format, file) = match args.format {
        FormatName::Csv => (DetectionFormat::Csv, "detections.csv"),
        FormatName::Json => (DetectionFormat::Jsonl, "detections.jsonl"),
    };
    let path = args.out_dir.join(file);
    fs::write(&path, write_detections(&data.detections, format))
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    let _ = writeln!(
        stderr,
        "wrote {} annotations and {} detections to {}",
        data.annotations.len(),
        data.detections.len(),
        args.out_dir.display()
    );
    Ok(())
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let first = text.lines().next().unwrap_or("invalid arguments");
                let first = first.trim_start_matches("error: ");
                let _ = writeln!(stderr, "mobeval: error[usage]: {first}");
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Aggregate(a) => cmd_aggregate(a, stdout, stderr),
        Command::Evaluate(a) => cmd_evaluate(a, stdout, stderr),
        Command::Sweep(a) => cmd_sweep(a, stdout, stderr),
        Command::PrCurve(a) => cmd_pr_curve(a, stdout, stderr),
        Command::GenFixtures(a) => cmd_gen_fixtures(a, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.line());
            e.exit_code()
        }
    }
}
