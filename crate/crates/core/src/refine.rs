//! Optimization-based box refinement: gradient ascent on predicted IoU.
//!
//! Each active box takes the step `b += lambda * scale_gradient(grad, b)`.
//! After the step the box is frozen when its predicted score moved by less
//! than `omega1`, or dropped by more than `|omega2|`. The step itself is kept
//! even when it degraded the score, unless `rollback_on_degrade` is set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::geometry::{scale_gradient, BoundingBox, Detection};
use crate::predictor::IouPredictor;

/// Boxes narrower or shorter than this are never produced by a step.
pub const MIN_BOX_EXTENT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Number of ascent iterations.
    pub steps: usize,
    /// Step size.
    pub lambda: f64,
    /// Early-stop threshold on `|new - prev|`.
    pub omega1: f64,
    /// Degeneration tolerance on `new - prev`; negative.
    pub omega2: f64,
    /// Restore the pre-step box when a step degrades the score beyond `omega2`.
    pub rollback_on_degrade: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            lambda: 0.5,
            omega1: 0.001,
            omega2: -0.01,
            rollback_on_degrade: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.omega1 > 0.0) {
            return Err(Error::Config(format!("omega1 must be positive, got {}", self.omega1)));
        }
        if !(self.omega2 < 0.0) {
            return Err(Error::Config(format!("omega2 must be negative, got {}", self.omega2)));
        }
        Ok(())
    }
}

/// What happened to one box in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub box_index: usize,
    /// 1-based iteration number.
    pub iteration: usize,
    /// Box after this iteration.
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub prev_score: f64,
    pub new_score: f64,
    /// The box is frozen from this iteration on.
    pub frozen: bool,
    /// The step would have produced a degenerate box and was discarded.
    pub degenerate: bool,
    /// The step was undone because it degraded the score.
    pub rolled_back: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub records: Vec<TraceRecord>,
}

impl RefineTrace {
    /// Records of one box, in iteration order.
    pub fn for_box(&self, box_index: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.box_index == box_index)
    }

    /// Line-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Refined boxes plus the final predicted score of each.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub boxes: Vec<BoundingBox>,
    pub scores: Vec<f64>,
    pub trace: RefineTrace,
}

/// Refines `(box, class_id)` pairs.
pub fn refine_items(
    items: &[(BoundingBox, u32)],
    fmap: &FeatureMap,
    predictor: &dyn IouPredictor,
    cfg: &RefineConfig,
) -> Result<RefineOutput> {
    cfg.validate()?;
    for (b, _) in items {
        b.validate()?;
    }
    let mut boxes: Vec<BoundingBox> = items.iter().map(|(b, _)| *b).collect();
    let mut scores = Vec::with_capacity(items.len());
    for (b, c) in items {
        scores.push(predictor.value(fmap, b, *c)?);
    }
    let mut frozen = vec![false; items.len()];
    let mut trace = RefineTrace::default();

    for iteration in 1..=cfg.steps {
        for (k, &(_, class_id)) in items.iter().enumerate() {
            if frozen[k] {
                continue;
            }
            let b = boxes[k];
            let grad = predictor.grad_coords(fmap, &b, class_id)?;
            let prev = predictor.value(fmap, &b, class_id)?;
            let step = scale_gradient(&grad, &b)?.map(|g| cfg.lambda * g);
            let next = b.offset(&step);

            if !(next.is_valid() && next.width() >= MIN_BOX_EXTENT && next.height() >= MIN_BOX_EXTENT) {
                frozen[k] = true;
                trace.records.push(TraceRecord {
                    box_index: k,
                    iteration,
                    bbox: b,
                    prev_score: prev,
                    new_score: prev,
                    frozen: true,
                    degenerate: true,
                    rolled_back: false,
                });
                continue;
            }

            let new = predictor.value(fmap, &next, class_id)?;
            let degraded = new - prev < cfg.omega2;
            let stop = (prev - new).abs() < cfg.omega1 || degraded;
            let rolled_back = degraded && cfg.rollback_on_degrade;
            if rolled_back {
                scores[k] = prev;
            } else {
                boxes[k] = next;
                scores[k] = new;
            }
            frozen[k] = stop;
            trace.records.push(TraceRecord {
                box_index: k,
                iteration,
                bbox: boxes[k],
                prev_score: prev,
                new_score: new,
                frozen: stop,
                degenerate: false,
                rolled_back,
            });
        }
    }
    Ok(RefineOutput { boxes, scores, trace })
}

/// Refines class-agnostic boxes (queried as class 0).
pub fn refine_boxes(
    boxes: &[BoundingBox],
    fmap: &FeatureMap,
    predictor: &dyn IouPredictor,
    cfg: &RefineConfig,
) -> Result<(Vec<BoundingBox>, RefineTrace)> {
    let items: Vec<_> = boxes.iter().map(|b| (*b, 0)).collect();
    let out = refine_items(&items, fmap, predictor, cfg)?;
    Ok((out.boxes, out.trace))
}

/// Indices of the `k` highest `cls_score` detections, ties by index.
pub fn topk_indices(dets: &[Detection], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].cls_score.total_cmp(&dets[a].cls_score).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Refines the `k` detections with the highest classification confidence
/// (ties by input index) and leaves the rest untouched. Refined detections
/// get their final predicted IoU as `loc_score`. Output keeps input order;
/// trace indices refer to input positions.
pub fn refine_topk(
    dets: &[Detection],
    k: usize,
    fmap: &FeatureMap,
    predictor: &dyn IouPredictor,
    cfg: &RefineConfig,
) -> Result<(Vec<Detection>, RefineTrace)> {
    let order = topk_indices(dets, k);
    let items: Vec<_> = order.iter().map(|&i| (dets[i].bbox, dets[i].class_id)).collect();
    let out = refine_items(&items, fmap, predictor, cfg)?;

    let mut refined = dets.to_vec();
    for (slot, &i) in order.iter().enumerate() {
        refined[i].bbox = out.boxes[slot];
        refined[i].loc_score = Some(out.scores[slot].clamp(0.0, 1.0));
    }
    let mut trace = out.trace;
    for r in &mut trace.records {
        r.box_index = order[r.box_index];
    }
    Ok((refined, trace))
}
