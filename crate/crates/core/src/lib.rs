//! IoU-aware post-processing for object detectors.
//!
//! The crate bundles the pieces needed to treat localization confidence as a
//! first-class signal next to classification confidence:
//!
//! - [`pooling`]: precise RoI pooling, i.e. the exact average of the bilinearly
//!   interpolated feature surface over a bin, with analytic gradients with
//!   respect to both the bin corners and the feature values. Quantized RoI
//!   pooling and RoI Align are included as baselines.
//! - [`predictor`]: localization-confidence estimators (an oracle over hidden
//!   ground truth and a two-layer feedforward head over pooled features).
//! - [`suppression`]: traditional NMS, Soft-NMS and IoU-guided NMS.
//! - [`refine`]: gradient ascent on predicted IoU with early stopping.
//! - [`synth`] and [`eval`]: synthetic scenes with controllable
//!   score/IoU misalignment and the metrics used to study them.

// Negated comparisons reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod featmap;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod pipeline;
pub mod pooling;
pub mod predictor;
pub mod refine;
pub mod rng;
pub mod stats;
pub mod suppression;
pub mod synth;

pub use error::{Error, Result};
pub use featmap::FeatureMap;
pub use geometry::{BoundingBox, BoxDelta, Detection, GroundTruthBox};
pub use pooling::{Bin, PoolGrid, PooledFeature};
pub use predictor::{IouPredictor, MlpIouPredictor, OracleIouPredictor};
pub use refine::{RefineConfig, RefineTrace};
pub use suppression::{NmsConfig, NmsVariant};
