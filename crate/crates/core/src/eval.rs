//! Detection metrics: greedy matching, AP, recall curves and positive-count
//! histograms.
//!
//! Metrics over several images take a slice of [`EvalImage`]; matching is
//! per image and counts are summed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, Detection, GroundTruthBox};

/// Which confidence orders detections for matching and precision-recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    #[default]
    Cls,
    Loc,
}

impl RankBy {
    fn score(self, d: &Detection) -> Result<f64> {
        match self {
            Self::Cls => Ok(d.cls_score),
            Self::Loc => d
                .loc_score
                .ok_or_else(|| Error::InvalidArgument("ranking by loc_score but a detection has none".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchEntry {
    /// Ground truth claimed by this detection.
    pub object_id: Option<u64>,
    /// IoU with the claimed ground truth, or the best same-class IoU when unmatched.
    pub iou: f64,
    pub positive: bool,
}

/// Per-detection outcome, in input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
}

impl MatchResult {
    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.positive).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalImage<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [GroundTruthBox],
}

fn rank_order(dets: &[Detection], rank: RankBy) -> Result<Vec<usize>> {
    let keys = dets.iter().map(|d| rank.score(d)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Greedy matching in descending rank order. Each detection claims the
/// unclaimed same-class ground truth of highest IoU, provided that IoU is
/// strictly above `omega_test`; IoU ties go to the lower object id.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    omega_test: f64,
    rank: RankBy,
) -> Result<MatchResult> {
    if !(omega_test > 0.0 && omega_test < 1.0) {
        return Err(Error::InvalidArgument(format!("omega_test must lie in (0, 1), got {omega_test}")));
    }
    for d in dets {
        d.bbox.validate()?;
    }
    for g in gts {
        g.bbox.validate()?;
    }
    let mut claimed = vec![false; gts.len()];
    let mut entries = vec![
        MatchEntry {
            object_id: None,
            iou: 0.0,
            positive: false,
        };
        dets.len()
    ];
    for k in rank_order(dets, rank)? {
        let d = &dets[k];
        let mut best: Option<(usize, f64)> = None;
        let mut best_any = 0.0f64;
        for (g, gt) in gts.iter().enumerate() {
            if gt.class_id != d.class_id {
                continue;
            }
            let v = iou_unchecked(&d.bbox, &gt.bbox);
            best_any = best_any.max(v);
            if claimed[g] || v <= omega_test {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, bv)) => v > bv || (v == bv && gt.object_id < gts[bg].object_id),
            };
            if better {
                best = Some((g, v));
            }
        }
        entries[k] = match best {
            Some((g, v)) => {
                claimed[g] = true;
                MatchEntry {
                    object_id: Some(gts[g].object_id),
                    iou: v,
                    positive: true,
                }
            }
            None => MatchEntry {
                object_id: None,
                iou: best_any,
                positive: false,
            },
        };
    }
    Ok(MatchResult { entries })
}

fn total_gts(images: &[EvalImage<'_>]) -> usize {
    images.iter().map(|im| im.gts.len()).sum()
}

/// AP at one threshold with 101-point interpolated precision. Detections of
/// all images are ranked together by `rank`, ties by image then input order.
pub fn average_precision(images: &[EvalImage<'_>], omega_test: f64, rank: RankBy) -> Result<f64> {
    let n_gt = total_gts(images);
    if n_gt == 0 {
        return Err(Error::Undefined("average precision without ground truth".into()));
    }
    let mut scored = Vec::new();
    for im in images {
        let m = match_detections(im.dets, im.gts, omega_test, rank)?;
        for (d, e) in im.dets.iter().zip(&m.entries) {
            scored.push((rank.score(d)?, e.positive));
        }
    }
    // Stable sort keeps image/input order among equal scores.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut precision = Vec::with_capacity(scored.len());
    let mut recall = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    for (k, &(_, positive)) in scored.iter().enumerate() {
        tp += positive as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Ok(sum / 101.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApSuite {
    /// Mean over thresholds 0.50, 0.55, ..., 0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap60: f64,
    pub ap70: f64,
    pub ap80: f64,
    pub ap90: f64,
}

/// Thresholds 0.50 to 0.95 in steps of 0.05.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

pub fn ap_suite(images: &[EvalImage<'_>], rank: RankBy) -> Result<ApSuite> {
    let aps = coco_thresholds()
        .into_iter()
        .map(|t| average_precision(images, t, rank))
        .collect::<Result<Vec<_>>>()?;
    Ok(ApSuite {
        ap: aps.iter().sum::<f64>() / aps.len() as f64,
        ap50: aps[0],
        ap60: aps[2],
        ap70: aps[4],
        ap80: aps[6],
        ap90: aps[8],
    })
}

/// `(threshold, recall)` pairs; recall is positives over ground truths.
pub fn recall_curve(images: &[EvalImage<'_>], thresholds: &[f64], rank: RankBy) -> Result<Vec<(f64, f64)>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("recall thresholds must be sorted ascending".into()));
    }
    let n_gt = total_gts(images);
    if n_gt == 0 {
        return Err(Error::Undefined("recall without ground truth".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let mut pos = 0;
            for im in images {
                pos += match_detections(im.dets, im.gts, t, rank)?.positives();
            }
            Ok((t, pos as f64 / n_gt as f64))
        })
        .collect()
}

/// Bucket edges `0.5, 0.6, ..., 1.0`.
pub fn default_histogram_edges() -> Vec<f64> {
    (5..=10).map(|k| k as f64 / 10.0).collect()
}

/// Positives matched at `edges[0]`, counted per IoU bucket `(edges[k], edges[k+1]]`.
pub fn positive_histogram(images: &[EvalImage<'_>], edges: &[f64], rank: RankBy) -> Result<Vec<usize>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges[0] <= 0.0 || edges[edges.len() - 1] > 1.0 {
        return Err(Error::InvalidArgument(format!("invalid histogram edges {edges:?}")));
    }
    let mut counts = vec![0; edges.len() - 1];
    for im in images {
        let m = match_detections(im.dets, im.gts, edges[0], rank)?;
        for e in m.entries.iter().filter(|e| e.positive) {
            if let Some(k) = (0..counts.len()).find(|&k| e.iou > edges[k] && e.iou <= edges[k + 1]) {
                counts[k] += 1;
            }
        }
    }
    Ok(counts)
}
