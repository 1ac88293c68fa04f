//! Multi-stage workflows shared by the command-line tool: building IoU-head
//! training data from ground truth, training the heads, and the end-to-end
//! reproduction run over synthetic scenes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{ap_suite, positive_histogram, recall_curve, ApSuite, EvalImage, RankBy};
use crate::featmap::FeatureMap;
use crate::geometry::{iou_unchecked, BoundingBox, Detection, GroundTruthBox};
use crate::predictor::{
    normalize_iou, train, BoxRegressor, IouPredictor, MlpIouPredictor, RegressionSample, TrainReport, TrainSample,
};
use crate::refine::{refine_topk, topk_indices, RefineConfig};
use crate::rng;
use crate::suppression::{self, NmsConfig, NmsVariant};
use crate::synth::{augment_ground_truth, generate_scene, misalignment_points, AugmentSample, ConfidenceField, MisalignmentReport, Scene};

/// A feature map with its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct LabeledImage<'a> {
    pub fmap: &'a FeatureMap,
    pub gts: &'a [GroundTruthBox],
}

impl<'a> From<&'a Scene> for LabeledImage<'a> {
    fn from(s: &'a Scene) -> Self {
        Self { fmap: &s.fmap, gts: &s.gts }
    }
}

/// Augmented boxes of every image, tagged with the image index. Each image
/// draws from its own stream so adding images does not perturb the others.
pub fn augment_images(images: &[LabeledImage<'_>], cfg: &RunConfig) -> Result<(Vec<(usize, AugmentSample)>, usize)> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (k, im) in images.iter().enumerate() {
        if im.gts.is_empty() {
            continue;
        }
        let mut r = rng::split_indexed(cfg.seed, rng::stream::AUGMENT, k as u64);
        let bounds = Some((im.fmap.width() as f64, im.fmap.height() as f64));
        let out = augment_ground_truth(im.gts, &cfg.augment, bounds, &mut r)?;
        skipped += out.skipped.len();
        samples.extend(out.samples.into_iter().map(|s| (k, s)));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("augmentation produced no training samples".into()));
    }
    Ok((samples, skipped))
}

fn channels(images: &[LabeledImage<'_>]) -> Result<usize> {
    let c = images
        .first()
        .map(|im| im.fmap.channels())
        .ok_or_else(|| Error::InvalidArgument("no training images".into()))?;
    if images.iter().any(|im| im.fmap.channels() != c) {
        return Err(Error::InvalidArgument("feature maps disagree on channel count".into()));
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadTraining {
    pub samples: usize,
    pub skipped_ground_truths: usize,
    pub report: TrainReport,
}

/// Trains a fresh IoU head on augmented ground truth with normalized labels.
pub fn train_iou_head(images: &[LabeledImage<'_>], cfg: &RunConfig) -> Result<(MlpIouPredictor, HeadTraining)> {
    let c = channels(images)?;
    let (samples, skipped) = augment_images(images, cfg)?;
    let data: Vec<TrainSample<'_>> = samples
        .iter()
        .map(|(k, s)| TrainSample {
            fmap: images[*k].fmap,
            bbox: s.bbox,
            label: normalize_iou(s.iou),
        })
        .collect();
    let mut head = MlpIouPredictor::init(cfg.pool, c, cfg.train.hidden, &mut rng::split(cfg.seed, rng::stream::INIT))?;
    let report = train(&mut head, &data, &cfg.train)?;
    Ok((
        head,
        HeadTraining {
            samples: data.len(),
            skipped_ground_truths: skipped,
            report,
        },
    ))
}

/// Trains the box-regression baseline on the same augmented boxes.
pub fn train_regressor(images: &[LabeledImage<'_>], cfg: &RunConfig) -> Result<(BoxRegressor, TrainReport)> {
    let c = channels(images)?;
    let (samples, _) = augment_images(images, cfg)?;
    let data: Vec<RegressionSample<'_>> = samples
        .iter()
        .map(|(k, s)| RegressionSample {
            fmap: images[*k].fmap,
            bbox: s.bbox,
            target: s.gt.bbox,
        })
        .collect();
    let mut reg = BoxRegressor::init(cfg.pool, c, cfg.train.hidden, &mut rng::split(cfg.seed, rng::stream::REGRESSOR))?;
    let report = reg.train(&data, &cfg.train)?;
    Ok((reg, report))
}

/// Copies `dets` with `loc_score` set to the predictor's estimate, clamped to `[0, 1]`.
pub fn with_predicted_loc(dets: &[Detection], fmap: &FeatureMap, predictor: &dyn IouPredictor) -> Result<Vec<Detection>> {
    dets.iter()
        .map(|d| Ok(d.with_loc(predictor.value(fmap, &d.bbox, d.class_id)?.clamp(0.0, 1.0))))
        .collect()
}

/// Highest IoU of `b` with a same-class ground truth, 0 when there is none.
pub fn best_iou(b: &BoundingBox, class_id: u32, gts: &[GroundTruthBox]) -> f64 {
    gts.iter()
        .filter(|g| g.class_id == class_id)
        .map(|g| iou_unchecked(b, &g.bbox))
        .fold(0.0, f64::max)
}

/// A CSV table produced by [`repro`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproSummary {
    pub seed: u64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub ground_truths: usize,
    pub detections: usize,
    /// Correlation of classification confidence with true IoU.
    pub cls_iou_pearson: f64,
    /// Correlation of the trained head's estimate with true IoU.
    pub predicted_iou_pearson: f64,
    pub head: HeadTraining,
    pub regressor_final_loss: f64,
    pub ap: BTreeMap<String, ApSuite>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproOutput {
    pub tables: Vec<Table>,
    pub summary: ReproSummary,
}

/// Suppression methods compared in the reproduction run.
pub const METHODS: [&str; 6] = [
    "no_nms",
    "traditional",
    "soft_linear",
    "soft_gaussian",
    "iou_guided",
    "iou_guided_oracle",
];

fn images_of<'a>(dets: &'a [Vec<Detection>], scenes: &'a [Scene]) -> Vec<EvalImage<'a>> {
    dets.iter()
        .zip(scenes)
        .map(|(d, s)| EvalImage { dets: d, gts: &s.gts })
        .collect()
}

fn thresholds(lo: u32, hi: u32, step: u32) -> Vec<f64> {
    (lo..=hi).step_by(step as usize).map(|k| k as f64 / 100.0).collect()
}

/// Applies one of [`METHODS`] to a scene's detections. `predicted` carries
/// the trained head's estimate as `loc_score`; `dets` carries the true IoU.
fn suppress(method: &str, dets: &[Detection], predicted: &[Detection], nms: &NmsConfig) -> Result<Vec<Detection>> {
    let with = |variant| NmsConfig { variant, ..*nms };
    match method {
        "no_nms" => Ok(dets.to_vec()),
        "traditional" => suppression::run(dets, &with(NmsVariant::Traditional)),
        "soft_linear" => suppression::run(dets, &with(NmsVariant::SoftLinear)),
        "soft_gaussian" => suppression::run(dets, &with(NmsVariant::SoftGaussian)),
        "iou_guided" => suppression::run(predicted, &with(NmsVariant::IouGuided)),
        "iou_guided_oracle" => suppression::run(dets, &with(NmsVariant::IouGuided)),
        other => Err(Error::InvalidArgument(format!("unknown method {other}"))),
    }
}

fn mean_topk_iou(dets: &[Vec<Detection>], scenes: &[Scene], topk: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ds, s) in dets.iter().zip(scenes) {
        for k in topk_indices(ds, topk) {
            sum += best_iou(&ds[k].bbox, ds[k].class_id, &s.gts);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// End-to-end run: generate training and held-out scenes, train the IoU head
/// and the regression baseline, run every suppression method, refine, and
/// tabulate the diagnostics.
pub fn repro(cfg: &RunConfig) -> Result<ReproOutput> {
    cfg.validate()?;
    let n_train = cfg.repro.train_scenes as u64;
    let n_eval = cfg.repro.eval_scenes as u64;
    let train_scenes = (0..n_train).map(|k| generate_scene(&cfg.scene, k)).collect::<Result<Vec<_>>>()?;
    let eval_scenes = (n_train..n_train + n_eval)
        .map(|k| generate_scene(&cfg.scene, k))
        .collect::<Result<Vec<_>>>()?;

    let labeled: Vec<LabeledImage<'_>> = train_scenes.iter().map(LabeledImage::from).collect();
    let (head, head_training) = train_iou_head(&labeled, cfg)?;
    let (regressor, reg_report) = train_regressor(&labeled, cfg)?;

    let mut loss = Table::new("loss_curve", &["iteration", "loss"]);
    for (k, l) in head_training.report.loss_curve.iter().enumerate() {
        loss.push(vec![k.to_string(), l.to_string()]);
    }

    // Scatter of confidence against true IoU on held-out detections.
    let predicted: Vec<Vec<Detection>> = eval_scenes
        .iter()
        .map(|s| with_predicted_loc(&s.dets, &s.fmap, &head))
        .collect::<Result<_>>()?;
    let mut scatter = Table::new("confidence_vs_iou", &["image_id", "iou", "cls_score", "predicted_iou"]);
    let (mut cls_pts, mut pred_pts) = (Vec::new(), Vec::new());
    for (s, pd) in eval_scenes.iter().zip(&predicted) {
        let c = misalignment_points(&s.dets, &s.gts, ConfidenceField::Cls)?;
        let p = misalignment_points(pd, &s.gts, ConfidenceField::Loc)?;
        for (a, b) in c.iter().zip(&p) {
            scatter.push(vec![s.image_id.clone(), a.1.to_string(), a.0.to_string(), b.0.to_string()]);
        }
        cls_pts.extend(c);
        pred_pts.extend(p);
    }
    let cls_iou_pearson = MisalignmentReport::from_points(cls_pts)?.pearson;
    let predicted_iou_pearson = MisalignmentReport::from_points(pred_pts)?.pearson;

    let mut positives = Table::new("positives_by_iou", &["method", "iou_lo", "iou_hi", "count"]);
    let mut recall = Table::new("recall_vs_threshold", &["method", "threshold", "recall"]);
    let mut metrics = Table::new("metrics", &["metric", "threshold", "value"]);
    let mut ap = BTreeMap::new();
    let mut guided = Vec::new();
    let edges = thresholds(50, 100, 10);
    for method in METHODS {
        let kept: Vec<Vec<Detection>> = eval_scenes
            .iter()
            .zip(&predicted)
            .map(|(s, p)| suppress(method, &s.dets, p, &cfg.nms))
            .collect::<Result<_>>()?;
        let images = images_of(&kept, &eval_scenes);
        for w in edges.windows(2) {
            let n = positive_histogram(&images, w, RankBy::Cls)?[0];
            positives.push(vec![method.to_string(), w[0].to_string(), w[1].to_string(), n.to_string()]);
        }
        for (t, r) in recall_curve(&images, &thresholds(50, 95, 5), RankBy::Cls)? {
            recall.push(vec![method.to_string(), t.to_string(), r.to_string()]);
        }
        let suite = ap_suite(&images, RankBy::Cls)?;
        for (name, t, v) in [
            ("AP", None, suite.ap),
            ("AP", Some(0.5), suite.ap50),
            ("AP", Some(0.6), suite.ap60),
            ("AP", Some(0.7), suite.ap70),
            ("AP", Some(0.8), suite.ap80),
            ("AP", Some(0.9), suite.ap90),
        ] {
            metrics.push(vec![
                format!("{method}/{name}"),
                t.map(|t: f64| t.to_string()).unwrap_or_default(),
                v.to_string(),
            ]);
        }
        ap.insert(method.to_string(), suite);
        if method == "iou_guided" {
            guided = kept;
        }
    }

    let mut refinement = Table::new("refinement", &["method", "step", "mean_iou", "ap"]);
    for steps in 0..=cfg.refine.steps {
        let rcfg = RefineConfig { steps, ..cfg.refine };
        let refined: Vec<Vec<Detection>> = guided
            .iter()
            .zip(&eval_scenes)
            .map(|(d, s)| refine_topk(d, cfg.topk, &s.fmap, &head, &rcfg).map(|r| r.0))
            .collect::<Result<_>>()?;
        let suite = ap_suite(&images_of(&refined, &eval_scenes), RankBy::Cls)?;
        refinement.push(vec![
            "iou_gradient".into(),
            steps.to_string(),
            mean_topk_iou(&refined, &eval_scenes, cfg.topk).to_string(),
            suite.ap.to_string(),
        ]);
    }
    for k in 0..=cfg.repro.regress_steps {
        let regressed: Vec<Vec<Detection>> = guided
            .iter()
            .zip(&eval_scenes)
            .map(|(d, s)| {
                let mut out = d.clone();
                for i in topk_indices(d, cfg.topk) {
                    out[i].bbox = regressor.iterate(&s.fmap, &d[i].bbox, k)?;
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let suite = ap_suite(&images_of(&regressed, &eval_scenes), RankBy::Cls)?;
        refinement.push(vec![
            "regression".into(),
            k.to_string(),
            mean_topk_iou(&regressed, &eval_scenes, cfg.topk).to_string(),
            suite.ap.to_string(),
        ]);
    }

    let summary = ReproSummary {
        seed: cfg.seed,
        train_scenes: train_scenes.len(),
        eval_scenes: eval_scenes.len(),
        ground_truths: eval_scenes.iter().map(|s| s.gts.len()).sum(),
        detections: eval_scenes.iter().map(|s| s.dets.len()).sum(),
        cls_iou_pearson,
        predicted_iou_pearson,
        head: head_training,
        regressor_final_loss: reg_report.final_loss,
        ap,
    };
    Ok(ReproOutput {
        tables: vec![loss, scatter, positives, recall, refinement, metrics],
        summary,
    })
}
