use crate::error::Result;
use crate::featmap::FeatureMap;
use crate::geometry::{iou_grad, iou_unchecked, BoundingBox, BoxGrad, GroundTruthBox};

use super::IouPredictor;

/// Reports the true IoU against hidden ground truth: the same-class box with
/// the highest IoU, ties going to the lowest `object_id`. The feature map is
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleIouPredictor {
    gts: Vec<GroundTruthBox>,
}

impl OracleIouPredictor {
    pub fn new(gts: Vec<GroundTruthBox>) -> Result<Self> {
        for g in &gts {
            g.bbox.validate()?;
        }
        Ok(Self { gts })
    }

    pub fn ground_truth(&self) -> &[GroundTruthBox] {
        &self.gts
    }

    /// Matched ground truth and its IoU, or `None` when nothing overlaps.
    pub fn matched(&self, bbox: &BoundingBox, class_id: u32) -> Option<(&GroundTruthBox, f64)> {
        let mut best: Option<(&GroundTruthBox, f64)> = None;
        for g in self.gts.iter().filter(|g| g.class_id == class_id) {
            let v = iou_unchecked(bbox, &g.bbox);
            if v <= 0.0 {
                continue;
            }
            best = match best {
                Some((b, bv)) if bv > v || (bv == v && b.object_id < g.object_id) => Some((b, bv)),
                _ => Some((g, v)),
            };
        }
        best
    }
}

impl IouPredictor for OracleIouPredictor {
    fn value(&self, _fmap: &FeatureMap, bbox: &BoundingBox, class_id: u32) -> Result<f64> {
        bbox.validate()?;
        Ok(self.matched(bbox, class_id).map_or(0.0, |(_, v)| v))
    }

    fn grad_coords(&self, _fmap: &FeatureMap, bbox: &BoundingBox, class_id: u32) -> Result<BoxGrad> {
        bbox.validate()?;
        match self.matched(bbox, class_id) {
            Some((g, _)) => Ok(iou_grad(bbox, &g.bbox)?.grad),
            None => Ok([0.0; 4]),
        }
    }
}
