//! Localization-confidence estimators.
//!
//! An [`IouPredictor`] maps a box on a feature map to an estimate of its IoU
//! with the (unknown) matching ground truth, and exposes the gradient of that
//! estimate with respect to the box corners.

use crate::error::Result;
use crate::featmap::FeatureMap;
use crate::geometry::{BoundingBox, BoxGrad};

mod mlp;
mod oracle;
mod regressor;
mod train;

pub use mlp::{Mlp, MlpIouPredictor, PRWT_MAGIC, PRWT_VERSION};
pub use oracle::OracleIouPredictor;
pub use regressor::{BoxRegressor, RegressionSample, DELTA_STD};
pub use train::{fit, train, TrainConfig, TrainReport, TrainSample};

/// A localization-confidence estimator.
///
/// `class_id` selects the class-specific estimate; single-class predictors
/// ignore it.
pub trait IouPredictor: Send + Sync {
    /// Predicted IoU of `bbox`.
    fn value(&self, fmap: &FeatureMap, bbox: &BoundingBox, class_id: u32) -> Result<f64>;

    /// Gradient of [`IouPredictor::value`] with respect to `(x0, y0, x1, y1)`.
    fn grad_coords(&self, fmap: &FeatureMap, bbox: &BoundingBox, class_id: u32)
        -> Result<BoxGrad>;
}

/// Huber-style loss: `0.5 x^2` inside `[-1, 1]`, `|x| - 0.5` outside.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Affine map of IoU labels `[0.5, 1]` onto `[-1, 1]`.
pub fn normalize_iou(iou: f64) -> f64 {
    4.0 * iou - 3.0
}

pub fn denormalize_iou(v: f64) -> f64 {
    (v + 3.0) / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1(1.0), 0.5);
        assert_eq!(smooth_l1_grad(1.0), 1.0);
        assert_eq!(smooth_l1_grad(-1.0), -1.0);
        let h = 1e-7;
        assert!(((smooth_l1(1.0 + h) - smooth_l1(1.0)) / h - 1.0).abs() < 1e-6);
        assert!(((smooth_l1(1.0) - smooth_l1(1.0 - h)) / h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_iou(0.5), -1.0);
        assert_eq!(normalize_iou(1.0), 1.0);
        assert_eq!(normalize_iou(0.75), 0.0);
        assert_eq!(denormalize_iou(-1.0), 0.5);
    }

    proptest! {
        #[test]
        fn smooth_l1_even_and_nonnegative(x in -50.0..50.0f64) {
            prop_assert_eq!(smooth_l1(x), smooth_l1(-x));
            prop_assert!(smooth_l1(x) >= 0.0);
            prop_assert!(x == 0.0 || smooth_l1(x) > 0.0);
        }

        #[test]
        fn normalization_round_trips(v in 0.0..1.0f64) {
            prop_assert!((denormalize_iou(normalize_iou(v)) - v).abs() < 1e-15);
        }
    }
}
