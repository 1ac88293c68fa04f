//! The `locconf` command-line tool.
//!
//! Every command reads its settings from an optional TOML run configuration,
//! applies command-line overrides, validates, and writes its outputs
//! atomically. All randomness derives from `--seed`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{ap_suite, default_histogram_edges, positive_histogram, recall_curve, EvalImage, RankBy};
use crate::featmap::FeatureMap;
use crate::geometry::{Detection, GroundTruthBox};
use crate::gradcheck;
use crate::io::{self, BoxFormat, ImageMap, MetricRow};
use crate::pipeline::{self, LabeledImage};
use crate::predictor::{IouPredictor, MlpIouPredictor, OracleIouPredictor};
use crate::refine::{refine_topk, RefineTrace, TraceRecord};
use crate::suppression;
use crate::synth::{generate_scene, ConfidenceField};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const FEATMAP_DIR: &str = "featmaps";

#[derive(Debug, Parser)]
#[command(name = "locconf", version, about = "IoU-aware detection post-processing")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// NMS variant: traditional, soft_linear, soft_gaussian or iou_guided.
    #[arg(long, global = true)]
    pub variant: Option<suppression::NmsVariant>,
    /// Overlap above which NMS suppresses a box.
    #[arg(long, global = true)]
    pub omega_nms: Option<f64>,
    /// Refinement step size.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Refinement iterations.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Refinement stops once a step changes the score by less than this.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omega1: Option<f64>,
    /// Refinement stops once a step lowers the score by more than this (negative).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omega2: Option<f64>,
    /// Detections refined per image.
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Read boxes as `[x, y, w, h]` instead of corners.
    #[arg(long, global = true)]
    pub coco_boxes: bool,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            variant: self.variant,
            omega_nms: self.omega_nms,
            lambda: self.lambda,
            steps: self.steps,
            omega1: self.omega1,
            omega2: self.omega2,
            topk: self.topk,
        }
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out is required".into()))
    }

    fn box_format(&self) -> BoxFormat {
        if self.coco_boxes {
            BoxFormat::Coco
        } else {
            BoxFormat::Corners
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rank {
    Cls,
    Loc,
}

impl From<Rank> for RankBy {
    fn from(r: Rank) -> Self {
        match r {
            Rank::Cls => RankBy::Cls,
            Rank::Loc => RankBy::Loc,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes: ground truth, detections and feature maps.
    Synth {
        /// Number of scenes; defaults to the configured evaluation count.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Apply non-maximum suppression to a detection file.
    Nms {
        #[arg(long)]
        input: PathBuf,
    },
    /// Refine the top-k detections of every image by IoU gradient ascent.
    Refine {
        #[arg(long)]
        input: PathBuf,
        /// Directory of `<image_id>.prfm` feature maps.
        #[arg(long)]
        featmaps: PathBuf,
        /// Trained IoU head.
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the true IoU against `--ground-truth` as the predictor.
        #[arg(long, requires = "ground_truth")]
        oracle: bool,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Line-delimited JSON trace of every refinement step.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train the IoU head on augmented ground truth of a scene directory.
    Train {
        /// Output directory of `synth`.
        #[arg(long)]
        scenes: PathBuf,
        /// Loss curve CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Compute AP, recall curves, positive histograms and correlations.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Confidence that orders detections for matching.
        #[arg(long, value_enum, default_value_t = Rank::Cls)]
        rank: Rank,
    },
    /// Check analytic gradients and integrals against numerical oracles.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// End-to-end run on synthetic scenes producing the diagnostic tables.
    Repro,
}

/// Parses the process arguments and runs the selected command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let cfg = RunConfig::resolve(g.config.as_deref(), &g.overrides())?;
    match &cli.command {
        Command::Synth { scenes } => cmd_synth(&cfg, scenes.unwrap_or(cfg.repro.eval_scenes), g.out()?),
        Command::Nms { input } => cmd_nms(&cfg, input, g.box_format(), g.out()?),
        Command::Refine {
            input,
            featmaps,
            checkpoint,
            oracle,
            ground_truth,
            trace,
        } => {
            let source = match (checkpoint, oracle, ground_truth) {
                (Some(p), false, _) => PredictorSource::Checkpoint(p.clone()),
                (None, true, Some(gt)) => PredictorSource::Oracle(gt.clone()),
                _ => return Err(Error::InvalidArgument("refine needs --checkpoint or --oracle".into())),
            };
            cmd_refine(&cfg, input, featmaps, &source, g.box_format(), g.out()?, trace.as_deref())
        }
        Command::Train { scenes, loss_csv } => cmd_train(&cfg, scenes, g.out()?, loss_csv.as_deref()),
        Command::Eval {
            detections,
            ground_truth,
            rank,
        } => cmd_eval(detections, ground_truth, (*rank).into(), g.box_format(), g.out()?),
        Command::Gradcheck { tolerance } => cmd_gradcheck(cfg.seed, *tolerance, g.out.as_deref()),
        Command::Repro => cmd_repro(&cfg, g.out()?),
    }
    .map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn featmap_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.prfm"))
}

/// Writes `n` scenes to `out`: ground truth, detections (with true IoU as
/// `loc_score`) and one feature map per scene.
pub fn cmd_synth(cfg: &RunConfig, n: usize, out: &Path) -> Result<bool> {
    let maps = out.join(FEATMAP_DIR);
    io::create_dir(&maps)?;
    let mut gts = ImageMap::new();
    let mut dets = ImageMap::new();
    for k in 0..n as u64 {
        let s = generate_scene(&cfg.scene, k)?;
        s.fmap.save(&featmap_path(&maps, &s.image_id))?;
        gts.insert(s.image_id.clone(), s.gts);
        dets.insert(s.image_id, s.dets);
    }
    io::write_ground_truth(&out.join(GROUND_TRUTH_FILE), &gts)?;
    io::write_detections(&out.join(DETECTIONS_FILE), &dets)?;
    println!("wrote {n} scenes to {}", out.display());
    Ok(true)
}

pub fn cmd_nms(cfg: &RunConfig, input: &Path, format: BoxFormat, out: &Path) -> Result<bool> {
    let dets = io::read_detections(input, format)?;
    let mut kept = ImageMap::new();
    let (mut before, mut after) = (0, 0);
    for (id, ds) in &dets {
        let k = suppression::run(ds, &cfg.nms).map_err(|e| Error::InvalidArgument(format!("image {id}: {e}")))?;
        before += ds.len();
        after += k.len();
        kept.insert(id.clone(), k);
    }
    io::write_detections(out, &kept)?;
    println!("{}: kept {after} of {before} detections", cfg.nms.variant);
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSource {
    Checkpoint(PathBuf),
    /// Ground-truth file for the oracle.
    Oracle(PathBuf),
}

#[derive(serde::Serialize)]
struct TraceLine<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

pub fn cmd_refine(
    cfg: &RunConfig,
    input: &Path,
    featmaps: &Path,
    source: &PredictorSource,
    format: BoxFormat,
    out: &Path,
    trace_path: Option<&Path>,
) -> Result<bool> {
    let dets = io::read_detections(input, format)?;
    let head = match source {
        PredictorSource::Checkpoint(p) => Some(MlpIouPredictor::load(p)?),
        PredictorSource::Oracle(_) => None,
    };
    let gts = match source {
        PredictorSource::Oracle(p) => io::read_ground_truth(p, format)?,
        PredictorSource::Checkpoint(_) => ImageMap::new(),
    };
    let mut refined = ImageMap::new();
    let mut trace = String::new();
    for (id, ds) in &dets {
        let fmap = FeatureMap::load(&featmap_path(featmaps, id))?;
        let oracle;
        let predictor: &dyn IouPredictor = match &head {
            Some(h) => h,
            None => {
                oracle = OracleIouPredictor::new(gts.get(id).cloned().unwrap_or_default())?;
                &oracle
            }
        };
        let (r, t): (Vec<Detection>, RefineTrace) = refine_topk(ds, cfg.topk, &fmap, predictor, &cfg.refine)?;
        for record in &t.records {
            trace.push_str(&serde_json::to_string(&TraceLine { image_id: id, record })?);
            trace.push('\n');
        }
        refined.insert(id.clone(), r);
    }
    io::write_detections(out, &refined)?;
    if let Some(p) = trace_path {
        io::write_string(p, &trace)?;
    }
    println!("refined {} images", refined.len());
    Ok(true)
}

/// Loads a `synth` output directory.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<(String, FeatureMap, Vec<GroundTruthBox>)>> {
    let gts = io::read_ground_truth(&dir.join(GROUND_TRUTH_FILE), BoxFormat::Corners)?;
    gts.into_iter()
        .map(|(id, g)| {
            let fmap = FeatureMap::load(&featmap_path(&dir.join(FEATMAP_DIR), &id))?;
            Ok((id, fmap, g))
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, scenes: &Path, out: &Path, loss_csv: Option<&Path>) -> Result<bool> {
    let loaded = load_scene_dir(scenes)?;
    let images: Vec<LabeledImage<'_>> = loaded.iter().map(|(_, f, g)| LabeledImage { fmap: f, gts: g }).collect();
    let (head, stats) = pipeline::train_iou_head(&images, cfg)?;
    head.save(out)?;
    if let Some(p) = loss_csv {
        let rows: Vec<Vec<String>> = stats
            .report
            .loss_curve
            .iter()
            .enumerate()
            .map(|(k, l)| vec![k.to_string(), l.to_string()])
            .collect();
        io::write_csv(p, &["iteration", "loss"], &rows)?;
    }
    if stats.skipped_ground_truths > 0 {
        eprintln!("warning: {} ground truths produced no training sample", stats.skipped_ground_truths);
    }
    println!(
        "trained on {} samples: loss {} -> {}",
        stats.samples, stats.report.initial_loss, stats.report.final_loss
    );
    Ok(true)
}

pub fn cmd_eval(detections: &Path, ground_truth: &Path, rank: RankBy, format: BoxFormat, out: &Path) -> Result<bool> {
    let dets = io::read_detections(detections, format)?;
    let gts = io::read_ground_truth(ground_truth, format)?;
    let ids: std::collections::BTreeSet<&String> = dets.keys().chain(gts.keys()).collect();
    let empty_d: Vec<Detection> = Vec::new();
    let empty_g: Vec<GroundTruthBox> = Vec::new();
    let images: Vec<EvalImage<'_>> = ids
        .iter()
        .map(|id| EvalImage {
            dets: dets.get(*id).unwrap_or(&empty_d),
            gts: gts.get(*id).unwrap_or(&empty_g),
        })
        .collect();

    let mut rows = Vec::new();
    let suite = ap_suite(&images, rank)?;
    rows.push(MetricRow::new("AP", None, suite.ap));
    for (t, v) in [(0.5, suite.ap50), (0.6, suite.ap60), (0.7, suite.ap70), (0.8, suite.ap80), (0.9, suite.ap90)] {
        rows.push(MetricRow::new("AP", Some(t), v));
    }
    let thresholds: Vec<f64> = (10..=19).map(|k| k as f64 * 0.05).collect();
    for (t, r) in recall_curve(&images, &thresholds, rank)? {
        rows.push(MetricRow::new("recall", Some(t), r));
    }
    let edges = default_histogram_edges();
    for (k, n) in positive_histogram(&images, &edges, rank)?.into_iter().enumerate() {
        rows.push(MetricRow::new(format!("positives({},{}]", edges[k], edges[k + 1]), Some(edges[0]), n as f64));
    }
    let mut correlations = Vec::new();
    for (name, field) in [("pearson_cls_iou", ConfidenceField::Cls), ("pearson_loc_iou", ConfidenceField::Loc)] {
        let mut pts = Vec::new();
        let mut complete = true;
        for im in &images {
            match crate::synth::misalignment_points(im.dets, im.gts, field) {
                Ok(p) => pts.extend(p),
                Err(_) => complete = false,
            }
        }
        if complete {
            if let Ok(r) = crate::synth::MisalignmentReport::from_points(pts) {
                rows.push(MetricRow::new(name, None, r.pearson));
                correlations.push((name, r.pearson));
            }
        }
    }

    io::create_dir(out)?;
    io::write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    let summary = serde_json::json!({
        "ap": suite,
        "recall": thresholds.iter().zip(rows.iter().filter(|r| r.metric == "recall")).map(|(t, r)| (t.to_string(), r.value)).collect::<std::collections::BTreeMap<_, _>>(),
        "correlation": correlations.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    });
    io::write_json(&out.join("summary.json"), &summary)?;
    println!("AP {:.4}  AP50 {:.4}  AP90 {:.4}", suite.ap, suite.ap50, suite.ap90);
    Ok(true)
}

/// Returns `false` (nonzero exit) when any suite exceeds its tolerance.
pub fn cmd_gradcheck(seed: u64, tolerance: f64, out: Option<&Path>) -> Result<bool> {
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be non-negative, got {tolerance}")));
    }
    let report = gradcheck::run(seed, tolerance)?;
    for s in &report.suites {
        println!(
            "{:<4} {:<20} cases={:<4} max_error={:.3e} tol={:.1e}",
            if s.passed { "ok" } else { "FAIL" },
            s.name,
            s.cases,
            s.max_error,
            s.tolerance
        );
    }
    if let Some(p) = out {
        io::write_json(p, &report)?;
    }
    Ok(report.passed())
}

pub fn cmd_repro(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let result = pipeline::repro(cfg)?;
    io::create_dir(out)?;
    for t in &result.tables {
        io::write_csv(&out.join(format!("{}.csv", t.name)), &t.header, &t.rows)?;
    }
    io::write_json(&out.join("summary.json"), &result.summary)?;
    let s = &result.summary;
    println!(
        "pearson(cls, iou) = {:.3}, pearson(predicted, iou) = {:.3}",
        s.cls_iou_pearson, s.predicted_iou_pearson
    );
    for (m, a) in &s.ap {
        println!("{m:<18} AP {:.4}  AP50 {:.4}  AP90 {:.4}", a.ap, a.ap50, a.ap90);
    }
    Ok(true)
}
