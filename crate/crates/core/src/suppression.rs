//! Non-maximum suppression: traditional, Soft-NMS and IoU-guided.
//!
//! Rankings are deterministic: ties in the ranking key are broken by the
//! higher secondary score, then by the lower input index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsVariant {
    Traditional,
    SoftLinear,
    SoftGaussian,
    IouGuided,
}

impl std::str::FromStr for NmsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traditional" => Ok(Self::Traditional),
            "soft_linear" | "soft-linear" => Ok(Self::SoftLinear),
            "soft_gaussian" | "soft-gaussian" => Ok(Self::SoftGaussian),
            "iou_guided" | "iou-guided" => Ok(Self::IouGuided),
            other => Err(Error::Config(format!("unknown NMS variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for NmsVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Traditional => "traditional",
            Self::SoftLinear => "soft_linear",
            Self::SoftGaussian => "soft_gaussian",
            Self::IouGuided => "iou_guided",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    /// Overlap above which a lower-ranked box is suppressed.
    pub omega_nms: f64,
    pub variant: NmsVariant,
    /// Gaussian Soft-NMS width.
    pub sigma: f64,
    /// Soft-NMS drops boxes whose decayed score falls below this.
    pub score_floor: f64,
    /// Only boxes of the same class suppress each other.
    pub per_class: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            omega_nms: 0.5,
            variant: NmsVariant::Traditional,
            sigma: 0.5,
            score_floor: 0.001,
            per_class: true,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_nms > 0.0 && self.omega_nms < 1.0) {
            return Err(Error::Config(format!(
                "omega_nms must lie in (0, 1), got {}",
                self.omega_nms
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.score_floor >= 0.0) {
            return Err(Error::Config(format!(
                "score_floor must be non-negative, got {}",
                self.score_floor
            )));
        }
        Ok(())
    }

    fn interacts(&self, a: &Detection, b: &Detection) -> bool {
        !self.per_class || a.class_id == b.class_id
    }
}

/// Runs the variant selected in `cfg`. IoU-guided NMS reads localization
/// confidence from each detection's `loc_score`.
pub fn run(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    match cfg.variant {
        NmsVariant::Traditional => nms_traditional(dets, cfg),
        NmsVariant::SoftLinear | NmsVariant::SoftGaussian => soft_nms(dets, cfg),
        NmsVariant::IouGuided => {
            let loc = loc_scores(dets)?;
            iou_guided_nms(dets, &loc, cfg)
        }
    }
}

/// Collects `loc_score` from every detection, failing if any is missing.
pub fn loc_scores(dets: &[Detection]) -> Result<Vec<f64>> {
    dets.iter()
        .enumerate()
        .map(|(k, d)| {
            d.loc_score.ok_or_else(|| {
                Error::InvalidArgument(format!("detection {k} has no localization confidence"))
            })
        })
        .collect()
}

fn validate_all(dets: &[Detection]) -> Result<()> {
    dets.iter().try_for_each(Detection::validate)
}

/// Indices sorted by `(key desc, secondary desc, index asc)`.
fn ranking(key: &[f64], secondary: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| {
        key[b]
            .total_cmp(&key[a])
            .then_with(|| secondary[b].total_cmp(&secondary[a]))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy NMS by classification confidence. Output is sorted by `cls_score`
/// descending.
pub fn nms_traditional(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    validate_all(dets)?;
    let key: Vec<f64> = dets.iter().map(|d| d.cls_score).collect();
    let secondary: Vec<f64> = dets.iter().map(|d| d.loc_score.unwrap_or(0.0)).collect();
    let order = ranking(&key, &secondary);

    let mut removed = vec![false; dets.len()];
    let mut out = Vec::new();
    for (pos, &m) in order.iter().enumerate() {
        if removed[m] {
            continue;
        }
        out.push(dets[m]);
        for &j in &order[pos + 1..] {
            if !removed[j]
                && cfg.interacts(&dets[m], &dets[j])
                && iou_unchecked(&dets[m].bbox, &dets[j].bbox) > cfg.omega_nms
            {
                removed[j] = true;
            }
        }
    }
    Ok(out)
}

/// Soft-NMS: repeatedly selects the highest current score and decays the
/// scores of its neighbours instead of removing them. Linear decay multiplies
/// by `1 - IoU` when `IoU > omega_nms`; Gaussian decay multiplies every
/// neighbour by `exp(-IoU^2 / sigma)`. Boxes whose score drops below
/// `score_floor` are discarded. Output is in selection order.
pub fn soft_nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    validate_all(dets)?;
    let gaussian = match cfg.variant {
        NmsVariant::SoftGaussian => true,
        NmsVariant::SoftLinear => false,
        other => {
            return Err(Error::Config(format!("soft_nms called with variant {other}")));
        }
    };
    let secondary: Vec<f64> = dets.iter().map(|d| d.loc_score.unwrap_or(0.0)).collect();
    let mut scores: Vec<f64> = dets.iter().map(|d| d.cls_score).collect();
    let mut alive: Vec<usize> = (0..dets.len()).filter(|&k| scores[k] >= cfg.score_floor).collect();
    let mut out = Vec::new();

    while !alive.is_empty() {
        let (pos, &m) = alive
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                scores[a]
                    .total_cmp(&scores[b])
                    .then_with(|| secondary[a].total_cmp(&secondary[b]))
                    .then(b.cmp(&a))
            })
            .expect("non-empty");
        alive.swap_remove(pos);
        let mut kept = dets[m];
        kept.cls_score = scores[m];
        out.push(kept);

        for &j in &alive {
            if !cfg.interacts(&dets[m], &dets[j]) {
                continue;
            }
            let o = iou_unchecked(&dets[m].bbox, &dets[j].bbox);
            if gaussian {
                scores[j] *= (-o * o / cfg.sigma).exp();
            } else if o > cfg.omega_nms {
                scores[j] *= 1.0 - o;
            }
        }
        alive.retain(|&j| scores[j] >= cfg.score_floor);
    }
    Ok(out)
}

/// IoU-guided NMS.
///
/// Boxes are ranked by localization confidence `loc_conf`. The selected box
/// removes every remaining box overlapping it by more than `omega_nms`, and
/// takes over the highest classification score among the boxes it removed.
/// Each output carries that merged `cls_score` and its own localization
/// confidence as `loc_score`. Output is in selection order.
pub fn iou_guided_nms(dets: &[Detection], loc_conf: &[f64], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    validate_all(dets)?;
    if loc_conf.len() != dets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detections but {} localization confidences",
            dets.len(),
            loc_conf.len()
        )));
    }
    if let Some(v) = loc_conf.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite localization confidence {v}")));
    }
    let cls: Vec<f64> = dets.iter().map(|d| d.cls_score).collect();
    let order = ranking(loc_conf, &cls);

    let mut removed = vec![false; dets.len()];
    let mut out = Vec::new();
    for (pos, &m) in order.iter().enumerate() {
        if removed[m] {
            continue;
        }
        let mut s = dets[m].cls_score;
        for &j in &order[pos + 1..] {
            if !removed[j]
                && cfg.interacts(&dets[m], &dets[j])
                && iou_unchecked(&dets[m].bbox, &dets[j].bbox) > cfg.omega_nms
            {
                s = s.max(dets[j].cls_score);
                removed[j] = true;
            }
        }
        out.push(Detection {
            cls_score: s,
            loc_score: Some(loc_conf[m]),
            ..dets[m]
        });
    }
    Ok(out)
}
