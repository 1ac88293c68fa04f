//! Run configuration: one TOML file with a section per stage, overridable
//! from the command line.
//!
//! ```toml
//! seed = 7
//! topk = 100
//!
//! [nms]
//! variant = "iou_guided"
//! omega_nms = 0.5
//!
//! [refine]
//! steps = 5
//! lambda = 0.5
//! ```
//!
//! The top-level `seed` is the single source of randomness: it replaces the
//! `seed` fields of `[scene]` and `[train]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::PoolGrid;
use crate::predictor::TrainConfig;
use crate::refine::RefineConfig;
use crate::suppression::{NmsConfig, NmsVariant};
use crate::synth::{AugmentConfig, SceneConfig};

/// Sizes of the end-to-end reproduction pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproConfig {
    /// Scenes used to train the IoU head and the regression baseline.
    pub train_scenes: usize,
    /// Held-out scenes for NMS, refinement and metrics.
    pub eval_scenes: usize,
    /// Largest number of iterative regression steps reported.
    pub regress_steps: usize,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self {
            train_scenes: 200,
            eval_scenes: 100,
            regress_steps: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Detections refined per image, by classification confidence.
    pub topk: usize,
    pub nms: NmsConfig,
    pub refine: RefineConfig,
    pub scene: SceneConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub pool: PoolGrid,
    pub repro: ReproConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            topk: 100,
            nms: NmsConfig::default(),
            refine: RefineConfig::default(),
            scene: SceneConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            pool: PoolGrid::default(),
            repro: ReproConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<NmsVariant>,
    pub omega_nms: Option<f64>,
    pub lambda: Option<f64>,
    pub steps: Option<usize>,
    pub omega1: Option<f64>,
    pub omega2: Option<f64>,
    pub topk: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reads `path` if given, applies overrides, propagates the master seed
    /// and validates the result.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.variant {
            self.nms.variant = v;
        }
        if let Some(v) = o.omega_nms {
            self.nms.omega_nms = v;
        }
        if let Some(v) = o.lambda {
            self.refine.lambda = v;
        }
        if let Some(v) = o.steps {
            self.refine.steps = v;
        }
        if let Some(v) = o.omega1 {
            self.refine.omega1 = v;
        }
        if let Some(v) = o.omega2 {
            self.refine.omega2 = v;
        }
        if let Some(v) = o.topk {
            self.topk = v;
        }
        self.scene.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.nms.validate()?;
        self.refine.validate()?;
        self.scene.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        self.pool.validate()?;
        if self.repro.train_scenes == 0 || self.repro.eval_scenes == 0 {
            return Err(Error::Config("repro scene counts must be positive".into()));
        }
        Ok(())
    }
}
