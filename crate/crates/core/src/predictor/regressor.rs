use rand::Rng;

use crate::error::Result;
use crate::featmap::FeatureMap;
use crate::geometry::{decode_delta, encode_delta, BoundingBox, BoxDelta};
use crate::pooling::{prpool_roi, PoolGrid};

use super::mlp::Mlp;
use super::train::{fit, TrainConfig, TrainReport};

/// Per-component scale of regression targets; the head predicts
/// `delta / DELTA_STD`.
pub const DELTA_STD: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// A jittered box paired with the ground truth it should move to.
#[derive(Debug, Clone, Copy)]
pub struct RegressionSample<'a> {
    pub fmap: &'a FeatureMap,
    pub bbox: BoundingBox,
    pub target: BoundingBox,
}

/// Feedforward bounding-box regressor over pooled features, the baseline
/// that refinement by IoU gradient ascent is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegressor {
    pub net: Mlp,
    pub grid: PoolGrid,
}

impl BoxRegressor {
    pub fn init<R: Rng + ?Sized>(grid: PoolGrid, channels: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        grid.validate()?;
        Ok(Self {
            net: Mlp::random(grid.cells() * channels, hidden, 4, rng)?,
            grid,
        })
    }

    /// Fits the head to `encode_delta(bbox, target)` with a smooth-L1 loss.
    pub fn train(&mut self, data: &[RegressionSample<'_>], cfg: &TrainConfig) -> Result<TrainReport> {
        let mut inputs = Vec::with_capacity(data.len());
        let mut targets = Vec::with_capacity(data.len());
        for s in data {
            inputs.push(prpool_roi(s.fmap, &s.bbox, self.grid)?.values);
            let d = encode_delta(&s.bbox, &s.target)?.to_array();
            targets.push((0..4).map(|k| d[k] / DELTA_STD[k]).collect());
        }
        fit(&mut self.net, &inputs, &targets, cfg)
    }

    pub fn predict(&self, fmap: &FeatureMap, bbox: &BoundingBox) -> Result<BoxDelta> {
        let pooled = prpool_roi(fmap, bbox, self.grid)?;
        let out = self.net.forward(&pooled.values)?;
        Ok(BoxDelta::from_array([
            out[0] * DELTA_STD[0],
            out[1] * DELTA_STD[1],
            out[2] * DELTA_STD[2],
            out[3] * DELTA_STD[3],
        ]))
    }

    /// One regression step.
    pub fn apply(&self, fmap: &FeatureMap, bbox: &BoundingBox) -> Result<BoundingBox> {
        decode_delta(bbox, &self.predict(fmap, bbox)?)
    }

    /// `k` regression steps, each fed the previous output.
    pub fn iterate(&self, fmap: &FeatureMap, bbox: &BoundingBox, k: usize) -> Result<BoundingBox> {
        let mut b = *bbox;
        b.validate()?;
        for _ in 0..k {
            b = self.apply(fmap, &b)?;
        }
        Ok(b)
    }

    /// Boxes after `0..=k_max` steps.
    pub fn trajectory(&self, fmap: &FeatureMap, bbox: &BoundingBox, k_max: usize) -> Result<Vec<BoundingBox>> {
        bbox.validate()?;
        let mut out = vec![*bbox];
        for _ in 0..k_max {
            let last = *out.last().expect("non-empty");
            out.push(self.apply(fmap, &last)?);
        }
        Ok(out)
    }
}
