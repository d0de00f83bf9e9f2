use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use posekit_core::balance::{compute_r, weight, ClassFrequencyTable};
use posekit_core::dataset::{
    expand_paths, load_coco_keypoints, load_predictions, match_predictions, AnnotationRecord,
    PredictionRecord, Rejection,
};
use posekit_core::descriptor::{descriptor, query_descriptor};
use posekit_core::heatmap::{
    decode_keypoints, encode_target, DecodeConfig, EncodeConfig, HeatmapStack, DEFAULT_SMOOTH_SIGMA,
};
use posekit_core::index::{build_index, PoseIndex, QueryResult};
use posekit_core::metrics::{keypoint_breakdown, MetricConfig, MetricReport};
use posekit_core::KeypointSigmas;
use posekit_service::api::QueryRequest;
use posekit_service::ServiceConfig;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "posekit", version, about = "Keypoint evaluation and pose retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against ground truth and write a JSON report.
    Eval(EvalArgs),
    /// Build or query a pose index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run the HTTP query service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Encode or decode heatmap stacks.
    #[command(subcommand)]
    Heatmap(HeatmapCommand),
    /// Per-class balance ratios and loss weights from a frequency table.
    Weights {
        #[arg(long)]
        frequencies: PathBuf,
        #[arg(long, default_value_t = 512)]
        batch: u64,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth COCO keypoint document, or a directory of them.
    #[arg(long)]
    gt: PathBuf,
    /// Predictions: a COCO results array or keypoint document, or a directory.
    #[arg(long)]
    pred: PathBuf,
    /// 25-row `name kappa` table; COCO defaults when omitted.
    #[arg(long)]
    sigmas: Option<PathBuf>,
    /// Metric settings as JSON; defaults when omitted.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdField {
    Image,
    Annotation,
    FileName,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which record field becomes the index id.
        #[arg(long, value_enum, default_value = "image")]
        id: IdField,
    },
    Query {
        #[arg(long)]
        idx: PathBuf,
        /// A query document (`{v, keypoints, bbox?, k?}`) or a COCO keypoint
        /// document whose every annotation is queried.
        #[arg(long)]
        query: PathBuf,
        #[arg(short, long)]
        k: Option<usize>,
    },
    Info {
        #[arg(long)]
        idx: PathBuf,
    },
}

#[derive(Subcommand)]
enum HeatmapCommand {
    /// Write the target stack for one annotation.
    Encode {
        #[arg(long)]
        annotations: PathBuf,
        /// Annotation id; the first record when omitted.
        #[arg(long)]
        annotation_id: Option<u64>,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 1.0)]
        cells_per_unit: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        #[arg(long)]
        sigmas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the decoded grid-cell keypoints of a stack as JSON.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SMOOTH_SIGMA)]
        smooth_sigma: f64,
        #[arg(long)]
        min_peak: Option<f32>,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Eval(args) => eval(&args),
        Command::Index(IndexCommand::Build { annotations, out, id }) => index_build(&annotations, &out, id),
        Command::Index(IndexCommand::Query { idx, query, k }) => index_query(&idx, &query, k),
        Command::Index(IndexCommand::Info { idx }) => {
            let index = load_index(&idx)?;
            print_json(&json!({
                "rows": index.len(),
                "dim": index.dim(),
                "checksum": index.checksum(),
            }))
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config)?;
            tokio::runtime::Runtime::new()?.block_on(posekit_service::run(cfg))?;
            Ok(())
        }
        Command::Heatmap(cmd) => heatmap(cmd),
        Command::Weights { frequencies, batch } => weights(&frequencies, batch),
    }
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_sigmas(path: Option<&Path>) -> Result<KeypointSigmas> {
    match path {
        Some(p) => KeypointSigmas::parse(&read(p)?).with_context(|| format!("sigma table {}", p.display())),
        None => Ok(KeypointSigmas::default()),
    }
}

/// Rejections tagged with the file they came from.
fn tagged(file: &Path, rejected: Vec<Rejection>) -> Vec<Value> {
    rejected
        .into_iter()
        .map(|r| json!({ "file": file.display().to_string(), "rejection": r }))
        .collect()
}

fn load_annotations(path: &Path) -> Result<(Vec<AnnotationRecord>, Vec<Value>)> {
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for file in expand_paths(path, "json")? {
        let report = load_coco_keypoints(&read(&file)?).with_context(|| file.display().to_string())?;
        records.extend(report.records);
        rejected.extend(tagged(&file, report.rejected));
    }
    Ok((records, rejected))
}

fn eval(args: &EvalArgs) -> Result<()> {
    let sigmas = load_sigmas(args.sigmas.as_deref())?;
    let config: MetricConfig = match &args.metrics {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("metric config {}", p.display()))?,
        None => MetricConfig::default(),
    };
    let (gt, gt_rejected) = load_annotations(&args.gt)?;
    let mut preds: Vec<PredictionRecord> = Vec::new();
    let mut pred_rejected = Vec::new();
    for file in expand_paths(&args.pred, "json")? {
        let (p, r) = load_predictions(&read(&file)?).with_context(|| file.display().to_string())?;
        preds.extend(p);
        pred_rejected.extend(tagged(&file, r));
    }
    let (pairs, matching) = match_predictions(&gt, &preds);
    ensure!(!pairs.is_empty(), "no ground-truth record has a usable prediction");
    let metrics: MetricReport = keypoint_breakdown(&pairs, &sigmas, &config)?;

    let report = json!({
        "version": metrics.version,
        "inputs": {
            "gt": args.gt.display().to_string(),
            "pred": args.pred.display().to_string(),
        },
        "sigmas": sigmas.as_array().to_vec(),
        "metrics": metrics,
        "skips": {
            "gt_rejected": gt_rejected,
            "pred_rejected": pred_rejected,
            "unmatched_gt": matching.unmatched_gt,
            "unlabeled_gt": matching.unlabeled_gt,
        },
    });
    let mut w = BufWriter::new(File::create(&args.report).with_context(|| args.report.display().to_string())?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.flush()?;

    let a = &metrics.aggregate;
    println!("instances  {}", metrics.instances);
    println!("mean OKS   {:.4}", a.mean_oks);
    for t in &a.oks {
        println!("OKS@{:<6} {:.4}", t.threshold, t.rate.value.unwrap_or(0.0));
    }
    println!("PCKh@{:<5} {:.4} ({} skipped)", config.pckh_alpha, a.pckh.value(), a.pckh.skipped);
    println!("PDJ@{:<6} {:.4} ({} skipped)", config.pdj_frac, a.pdj.value(), a.pdj.skipped);
    println!("PCPm@{:<5} {:.4} ({} skipped)", config.pcpm_alpha, a.pcpm.value(), a.pcpm.skipped);
    Ok(())
}

fn load_index(path: &Path) -> Result<PoseIndex> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    PoseIndex::load(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))
}

fn index_build(annotations: &Path, out: &Path, id: IdField) -> Result<()> {
    let (records, rejected) = load_annotations(annotations)?;
    let items = records.into_iter().map(|r| {
        let key = match id {
            IdField::Image => r.image_id.to_string(),
            IdField::Annotation => r.id.to_string(),
            IdField::FileName => r.file_name.clone().unwrap_or_else(|| r.image_id.to_string()),
        };
        (key, r.skeleton, r.bbox)
    });
    let (index, report) = build_index(items)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| out.display().to_string())?);
    index.save(&mut w)?;
    w.flush()?;
    print_json(&json!({
        "rows": index.len(),
        "dim": index.dim(),
        "checksum": index.checksum(),
        "skipped": report.skipped.iter().map(|(id, why)| json!({"id": id, "reason": why})).collect::<Vec<_>>(),
        "rejected": rejected,
    }))
}

fn index_query(idx: &Path, query: &Path, k: Option<usize>) -> Result<()> {
    let index = load_index(idx)?;
    let text = read(query)?;
    let doc: Value = serde_json::from_str(&text).with_context(|| query.display().to_string())?;
    if doc.get("annotations").is_some() {
        let report = load_coco_keypoints(&text)?;
        let k = k.unwrap_or(5);
        let mut out = Vec::new();
        for r in &report.records {
            let results: Vec<QueryResult> = match descriptor(&r.skeleton, &r.bbox) {
                Ok(d) => index.knn(&d, k)?,
                Err(e) => {
                    out.push(json!({ "annotation_id": r.id, "error": e.to_string() }));
                    continue;
                }
            };
            out.push(json!({ "annotation_id": r.id, "results": results }));
        }
        return print_json(&Value::from(out));
    }
    let mut req: QueryRequest = serde_json::from_value(doc).with_context(|| query.display().to_string())?;
    if k.is_some() {
        req.k = k;
    }
    let q = match req.validate(5, usize::MAX) {
        Ok(q) => q,
        Err(invalid) => bail!("{}: {}", invalid.code(), invalid.message()),
    };
    let d = query_descriptor(&q.skeleton, q.bbox.as_ref())?;
    print_json(&json!({ "v": req.v, "results": index.knn(&d, q.k)? }))
}

fn heatmap(cmd: HeatmapCommand) -> Result<()> {
    match cmd {
        HeatmapCommand::Encode {
            annotations,
            annotation_id,
            width,
            height,
            cells_per_unit,
            sigma_scale,
            sigmas,
            out,
        } => {
            ensure!(width > 0 && height > 0, "grid must be non-empty");
            let sigmas = load_sigmas(sigmas.as_deref())?;
            let report = load_coco_keypoints(&read(&annotations)?)?;
            let record = match annotation_id {
                Some(id) => report.records.iter().find(|r| r.id == id),
                None => report.records.first(),
            }
            .context("annotation not found")?;
            let cfg = EncodeConfig {
                sigma_scale,
                cells_per_unit,
                ..EncodeConfig::default()
            };
            let stack = encode_target(&record.skeleton, &record.bbox, &sigmas, width, height, &cfg);
            let mut w = BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?);
            stack.write_to(&mut w)?;
            w.flush()?;
            Ok(())
        }
        HeatmapCommand::Decode {
            input,
            smooth_sigma,
            min_peak,
        } => {
            let file = File::open(&input).with_context(|| input.display().to_string())?;
            let stack = HeatmapStack::read_from(BufReader::new(file))?;
            let s = decode_keypoints(&stack, &DecodeConfig { smooth_sigma, min_peak })?;
            let points: Vec<[f64; 3]> = s.keypoints.iter().map(|k| [k.x, k.y, k.v.flag() as f64]).collect();
            print_json(&json!({ "width": stack.width(), "height": stack.height(), "keypoints": points }))
        }
    }
}

fn weights(path: &Path, batch: u64) -> Result<()> {
    let table = ClassFrequencyTable::parse(&read(path)?)?;
    let ratios = compute_r(&table);
    let per_batch = table.expected_positives_per_batch(batch);
    let rows: Vec<Value> = table
        .names()
        .iter()
        .zip(ratios.ratios())
        .zip(table.frequencies().zip(per_batch))
        .map(|((name, &r), (f, e))| {
            json!({
                "class": name,
                "frequency": f,
                "positives_per_batch": e,
                "r": r,
                "weight_positive": weight(1.0, r),
                "weight_negative": weight(0.0, r),
            })
        })
        .collect();
    print_json(&json!({ "total": table.total(), "batch": batch, "classes": rows }))
}
