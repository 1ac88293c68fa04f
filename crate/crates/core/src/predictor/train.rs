use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::geometry::BoundingBox;
use crate::pooling::prpool_roi;
use crate::rng;

use super::mlp::{Mlp, MlpGrads};
use super::{smooth_l1, smooth_l1_grad, MlpIouPredictor};

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            iterations: 6000,
            batch_size: 32,
            seed: 0,
            hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size and hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean loss over the whole training set before the first step.
    pub initial_loss: f64,
    /// Mean loss over the whole training set after the last step.
    pub final_loss: f64,
    /// Minibatch loss of every iteration.
    pub loss_curve: Vec<f64>,
    /// Number of labels outside the normalized range `[-1, 1]`.
    pub out_of_range_labels: usize,
}

/// One training example for the IoU head. `label` is already normalized.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub fmap: &'a FeatureMap,
    pub bbox: BoundingBox,
    pub label: f64,
}

fn dataset_loss(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let out = net.forward(x)?;
        total += out.iter().zip(t).map(|(o, t)| smooth_l1(o - t)).sum::<f64>();
    }
    Ok(total / inputs.len() as f64)
}

/// Minimizes the mean smooth-L1 loss between `net(inputs[k])` and
/// `targets[k]` by minibatch SGD with a constant step. Batches are drawn with
/// replacement from a stream seeded by `cfg.seed`.
pub fn fit(net: &mut Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.len() != net.output) {
        return Err(Error::InvalidArgument(format!(
            "target width {} does not match network output {}",
            t.len(),
            net.output
        )));
    }
    let out_of_range_labels = targets.iter().flatten().filter(|v| v.abs() > 1.0).count();
    let initial_loss = dataset_loss(net, inputs, targets)?;
    if !initial_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            loss: initial_loss,
        });
    }

    let mut batches = rng::split(cfg.seed, rng::stream::TRAIN);
    let mut grads = MlpGrads::zeros_like(net);
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        grads.clear();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let k = batches.random_range(0..inputs.len());
            let t = &targets[k];
            net.accumulate(&inputs[k], &mut grads, |out| {
                loss += out.iter().zip(t).map(|(o, t)| smooth_l1(o - t)).sum::<f64>();
                out.iter().zip(t).map(|(o, t)| smooth_l1_grad(o - t)).collect()
            });
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, loss });
        }
        loss_curve.push(loss);
        net.apply_step(&grads, cfg.learning_rate / cfg.batch_size as f64);
    }

    let final_loss = dataset_loss(net, inputs, targets)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: cfg.iterations,
            loss: final_loss,
        });
    }
    Ok(TrainReport {
        initial_loss,
        final_loss,
        loss_curve,
        out_of_range_labels,
    })
}

/// Trains the IoU head on pre-normalized labels. Pooled features are computed
/// once up front.
pub fn train(predictor: &mut MlpIouPredictor, data: &[TrainSample<'_>], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut inputs = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for s in data {
        inputs.push(prpool_roi(s.fmap, &s.bbox, predictor.grid)?.values);
        targets.push(vec![s.label]);
    }
    fit(&mut predictor.net, &inputs, &targets, cfg)
}
