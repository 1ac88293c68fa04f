//! Synthetic scenes: ground truth, a feature map from which box overlap can
//! be read off, and detections whose classification score is correlated with
//! true IoU by a tunable amount. Also the ground-truth augmentation used to
//! build IoU-head training data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::geometry::{iou_unchecked, BoundingBox, Detection, GroundTruthBox};
use crate::rng;
use crate::stats::pearson;

/// Only detections overlapping their ground truth beyond this enter the
/// misalignment statistics.
pub const MISALIGNMENT_MIN_IOU: f64 = 0.5;

/// Channels of a rendered scene: a soft inside/outside indicator and a
/// pyramid peaking at the box center.
pub const SCENE_CHANNELS: usize = 2;

const PLACEMENT_ATTEMPTS: usize = 200;
const PLACEMENT_GAP: f64 = 2.0;
const SCORE_SPREAD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Range of gt side lengths.
    pub min_size: f64,
    pub max_size: f64,
    pub dets_per_object: usize,
    /// Target correlation between classification score and true IoU.
    pub rho: f64,
    pub seed: u64,
    /// Detections are drawn with IoU roughly uniform on `[min_det_iou, 1]`.
    pub min_det_iou: f64,
    /// Detection jitter, see [`Jitter`].
    pub shift: f64,
    pub log_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            min_objects: 2,
            max_objects: 5,
            min_size: 12.0,
            max_size: 32.0,
            dets_per_object: 12,
            rho: 0.2,
            seed: 0,
            min_det_iou: 0.5,
            shift: 0.25,
            log_scale: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "object count range [{}, {}] is empty or zero",
                self.min_objects, self.max_objects
            )));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return Err(Error::Config(format!(
                "box size range [{}, {}] is invalid",
                self.min_size, self.max_size
            )));
        }
        if self.max_size > self.width.min(self.height) as f64 {
            return Err(Error::Config(format!(
                "boxes up to {} do not fit a {}x{} image",
                self.max_size, self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.min_det_iou) {
            return Err(Error::Config(format!("min_det_iou must lie in [0, 1), got {}", self.min_det_iou)));
        }
        self.jitter().validate()
    }

    fn jitter(&self) -> Jitter {
        Jitter {
            shift: self.shift,
            log_scale: self.log_scale,
            aspect: 0.0,
        }
    }
}

/// Random box transform. A magnitude `m ~ U(0, 1)` is drawn first; the center
/// then moves by up to `m * shift` of the box size, each side is scaled by
/// `exp(m * U(-log_scale, log_scale))` and the aspect ratio by
/// `exp(m * U(-aspect, aspect))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub shift: f64,
    pub log_scale: f64,
    pub aspect: f64,
}

impl Jitter {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("shift", self.shift), ("log_scale", self.log_scale), ("aspect", self.aspect)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(&self, b: &BoundingBox, rng: &mut R) -> BoundingBox {
        let m: f64 = rng.random();
        let mut sym = |r: f64| m * r * rng.random_range(-1.0..=1.0);
        let (cx, cy) = b.center();
        let (w, h) = (b.width(), b.height());
        let dx = sym(self.shift) * w;
        let dy = sym(self.shift) * h;
        let sw = sym(self.log_scale);
        let sh = sym(self.log_scale);
        let a = sym(self.aspect);
        BoundingBox::from_center(cx + dx, cy + dy, w * (sw + 0.5 * a).exp(), h * (sh - 0.5 * a).exp())
    }
}

/// Equal-width IoU bins over `[lo, 1]`; IoU exactly 1 falls in the last bin.
#[derive(Debug, Clone, Copy)]
struct Strata {
    lo: f64,
    bins: usize,
}

impl Strata {
    fn bin(&self, iou: f64) -> Option<usize> {
        if !(iou >= self.lo) {
            return None;
        }
        let k = ((iou - self.lo) / (1.0 - self.lo) * self.bins as f64).floor() as usize;
        Some(k.min(self.bins - 1))
    }

    /// Draws jittered copies of `gt` until one lands in `bin`.
    fn draw<R: Rng + ?Sized>(
        &self,
        gt: &BoundingBox,
        bin: usize,
        jitter: &Jitter,
        bounds: Option<(f64, f64)>,
        budget: usize,
        rng: &mut R,
    ) -> Option<(BoundingBox, f64)> {
        for _ in 0..budget {
            let mut b = jitter.apply(gt, rng);
            if let Some((w, h)) = bounds {
                b = b.clip(w, h);
            }
            if !b.is_valid() {
                continue;
            }
            let iou = iou_unchecked(&b, gt);
            if self.bin(iou) == Some(bin) {
                return Some((b, iou));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub gts: Vec<GroundTruthBox>,
    pub fmap: FeatureMap,
    /// Detections carry their true IoU as `loc_score`.
    pub dets: Vec<Detection>,
}

pub fn scene_id(index: u64) -> String {
    format!("scene_{index:05}")
}

fn place_objects<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Vec<BoundingBox> {
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let (iw, ih) = (cfg.width as f64, cfg.height as f64);
    let mut placed: Vec<BoundingBox> = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(cfg.min_size..=cfg.max_size);
            let h = rng.random_range(cfg.min_size..=cfg.max_size);
            let x0 = rng.random_range(0.0..=iw - w);
            let y0 = rng.random_range(0.0..=ih - h);
            let b = BoundingBox::new(x0, y0, x0 + w, y0 + h);
            let clear = placed.iter().all(|p| {
                b.x0 >= p.x1 + PLACEMENT_GAP
                    || p.x0 >= b.x1 + PLACEMENT_GAP
                    || b.y0 >= p.y1 + PLACEMENT_GAP
                    || p.y0 >= b.y1 + PLACEMENT_GAP
            });
            if clear {
                placed.push(b);
                break;
            }
        }
    }
    placed
}

/// Renders objects into a `SCENE_CHANNELS`-channel map, combining objects
/// by maximum. Values are rounded to `f32` so the map survives the PRFM format.
pub fn render(width: usize, height: usize, boxes: &[BoundingBox]) -> Result<FeatureMap> {
    FeatureMap::from_fn(height, width, SCENE_CHANNELS, |i, j, c| {
        let (x, y) = (j as f64, i as f64);
        let v = boxes
            .iter()
            .map(|b| match c {
                0 => {
                    let inside = (x - b.x0).min(b.x1 - x).min(y - b.y0).min(b.y1 - y);
                    (0.5 + inside).clamp(0.0, 1.0)
                }
                _ => {
                    let (cx, cy) = b.center();
                    let u = (x - cx) / (0.5 * b.width());
                    let v = (y - cy) / (0.5 * b.height());
                    (1.0 - u.abs().max(v.abs())).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        v as f32 as f64
    })
}

/// Generates scene `index` of the sequence defined by `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng::split_indexed(cfg.seed, rng::stream::SCENES, index);
    let boxes = place_objects(cfg, &mut rng);
    let gts: Vec<GroundTruthBox> = boxes
        .iter()
        .enumerate()
        .map(|(k, &bbox)| GroundTruthBox { bbox, class_id: 0, object_id: k as u64 })
        .collect();
    let fmap = render(cfg.width, cfg.height, &boxes)?;

    let strata = Strata { lo: cfg.min_det_iou, bins: 10 };
    let jitter = cfg.jitter();
    let bounds = Some((cfg.width as f64, cfg.height as f64));
    let iou_mean = 0.5 * (1.0 + strata.lo);
    let iou_sd = (1.0 - strata.lo) / 12f64.sqrt();
    let noise = (1.0 - cfg.rho * cfg.rho).sqrt();

    let mut dets = Vec::with_capacity(gts.len() * cfg.dets_per_object);
    for gt in &gts {
        for _ in 0..cfg.dets_per_object {
            let mut drawn = None;
            for _ in 0..strata.bins {
                let bin = rng.random_range(0..strata.bins);
                drawn = strata.draw(&gt.bbox, bin, &jitter, bounds, 2000, &mut rng);
                if drawn.is_some() {
                    break;
                }
            }
            let Some((bbox, iou)) = drawn else { continue };
            let z = (iou - iou_mean) / iou_sd;
            let eps: f64 = StandardNormal.sample(&mut rng);
            let cls = (0.5 + SCORE_SPREAD * (cfg.rho * z + noise * eps)).clamp(0.001, 0.999);
            dets.push(Detection::new(bbox, gt.class_id, cls).with_loc(iou));
        }
    }
    Ok(Scene {
        image_id: scene_id(index),
        width: cfg.width,
        height: cfg.height,
        gts,
        fmap,
        dets,
    })
}

/// Scenes `0..n`.
pub fn generate_scenes(cfg: &SceneConfig, n: usize) -> Result<Vec<Scene>> {
    (0..n as u64).map(|k| generate_scene(cfg, k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum center shift as a fraction of box size.
    pub shift: f64,
    /// Maximum absolute log-scale change per side.
    pub log_scale: f64,
    /// Maximum absolute log change of the aspect ratio.
    pub aspect: f64,
    pub samples_per_gt: usize,
    /// Candidates below this IoU are discarded.
    pub omega_train: f64,
    /// IoU bins over `[omega_train, 1]` sampled equally often.
    pub bins: usize,
    /// Draws allowed per requested sample before its bin is given up.
    pub max_draws: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            shift: 0.25,
            log_scale: 0.3,
            aspect: 0.0,
            samples_per_gt: 32,
            omega_train: 0.5,
            bins: 10,
            max_draws: 2000,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_train > 0.0 && self.omega_train < 1.0) {
            return Err(Error::Config(format!(
                "omega_train must lie in (0, 1), got {}",
                self.omega_train
            )));
        }
        if self.bins == 0 || self.max_draws == 0 {
            return Err(Error::Config("bins and max_draws must be positive".into()));
        }
        self.jitter().validate()
    }

    fn jitter(&self) -> Jitter {
        Jitter {
            shift: self.shift,
            log_scale: self.log_scale,
            aspect: self.aspect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSample {
    pub bbox: BoundingBox,
    pub gt: GroundTruthBox,
    /// IoU of `bbox` with `gt`, not normalized.
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Augmented {
    pub samples: Vec<AugmentSample>,
    /// Object ids of ground truths for which no candidate survived.
    pub skipped: Vec<u64>,
}

/// Jitters each ground truth and keeps candidates with IoU at least
/// `omega_train`, cycling through the IoU bins so every bin is sampled
/// equally often. A bin that cannot be hit within the draw budget is
/// dropped for that ground truth. Candidates are clipped to `bounds` when given.
pub fn augment_ground_truth<R: Rng + ?Sized>(
    gts: &[GroundTruthBox],
    cfg: &AugmentConfig,
    bounds: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<Augmented> {
    cfg.validate()?;
    if gts.is_empty() {
        return Err(Error::InvalidArgument("no ground truth to augment".into()));
    }
    let strata = Strata { lo: cfg.omega_train, bins: cfg.bins };
    let jitter = cfg.jitter();
    let mut out = Augmented::default();
    for gt in gts {
        gt.bbox.validate()?;
        let mut reachable = vec![true; cfg.bins];
        let mut cursor = rng.random_range(0..cfg.bins);
        let mut produced = 0;
        while produced < cfg.samples_per_gt {
            let Some(bin) = (0..cfg.bins).map(|k| (cursor + k) % cfg.bins).find(|&b| reachable[b]) else {
                out.skipped.push(gt.object_id);
                break;
            };
            cursor = bin + 1;
            match strata.draw(&gt.bbox, bin, &jitter, bounds, cfg.max_draws, rng) {
                Some((bbox, iou)) => {
                    out.samples.push(AugmentSample { bbox, gt: *gt, iou });
                    produced += 1;
                }
                None => reachable[bin] = false,
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceField {
    Cls,
    Loc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisalignmentReport {
    pub pearson: f64,
    /// `(confidence, true IoU)` per qualifying detection.
    pub points: Vec<(f64, f64)>,
}

impl MisalignmentReport {
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        Ok(Self { pearson: pearson(&xs, &ys)?, points })
    }
}

/// `(confidence, true IoU)` for detections whose best same-class overlap
/// exceeds [`MISALIGNMENT_MIN_IOU`].
pub fn misalignment_points(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    field: ConfidenceField,
) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (k, d) in dets.iter().enumerate() {
        d.bbox.validate()?;
        let best = gts
            .iter()
            .filter(|g| g.class_id == d.class_id)
            .map(|g| iou_unchecked(&d.bbox, &g.bbox))
            .fold(0.0, f64::max);
        if best <= MISALIGNMENT_MIN_IOU {
            continue;
        }
        let conf = match field {
            ConfidenceField::Cls => d.cls_score,
            ConfidenceField::Loc => d.loc_score.ok_or_else(|| {
                Error::InvalidArgument(format!("detection {k} has no localization confidence"))
            })?,
        };
        points.push((conf, best));
    }
    Ok(points)
}

/// Pearson correlation between a confidence field and true IoU.
pub fn misalignment_report(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    field: ConfidenceField,
) -> Result<MisalignmentReport> {
    MisalignmentReport::from_points(misalignment_points(dets, gts, field)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
        let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
        let inter = iw * ih;
        inter / ((a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter)
    }

    fn scenes_until(cfg: &SceneConfig, n_dets: usize) -> Vec<Scene> {
        let mut out = Vec::new();
        let mut total = 0;
        let mut k = 0;
        while total < n_dets {
            let s = generate_scene(cfg, k).unwrap();
            total += s.dets.len();
            out.push(s);
            k += 1;
        }
        out
    }

    fn score_iou_pearson(rho: f64, seed: u64) -> f64 {
        let cfg = SceneConfig { rho, seed, ..Default::default() };
        let mut pts = Vec::new();
        for s in scenes_until(&cfg, 1000) {
            pts.extend(misalignment_points(&s.dets, &s.gts, ConfidenceField::Cls).unwrap());
        }
        MisalignmentReport::from_points(pts).unwrap().pearson
    }

    #[test]
    fn full_alignment() {
        assert!(score_iou_pearson(1.0, 1) >= 0.95);
    }

    #[test]
    fn no_alignment() {
        assert!(score_iou_pearson(0.0, 2).abs() <= 0.1);
    }

    #[test]
    fn weak_alignment_is_calibrated() {
        let r = score_iou_pearson(0.2, 3);
        assert!((r - 0.2).abs() <= 0.1, "r = {r}");
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig { seed: 9, ..Default::default() };
        assert_eq!(generate_scenes(&cfg, 3).unwrap(), generate_scenes(&cfg, 3).unwrap());
        let other = SceneConfig { seed: 10, ..Default::default() };
        assert_ne!(generate_scene(&cfg, 0).unwrap(), generate_scene(&other, 0).unwrap());
    }

    #[test]
    fn scene_boxes_are_valid_and_in_bounds() {
        let cfg = SceneConfig::default();
        for s in generate_scenes(&cfg, 20).unwrap() {
            assert!(!s.gts.is_empty());
            let (w, h) = (cfg.width as f64, cfg.height as f64);
            let inside = |b: &BoundingBox| b.is_valid() && b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= w && b.y1 <= h;
            assert!(s.gts.iter().all(|g| inside(&g.bbox)));
            for d in &s.dets {
                assert!(inside(&d.bbox));
                d.validate().unwrap();
                let best = s.gts.iter().map(|g| area_iou(&d.bbox, &g.bbox)).fold(0.0, f64::max);
                assert!((best - d.loc_score.unwrap()).abs() < 1e-12);
                assert!(best >= cfg.min_det_iou);
            }
            for (a, g) in s.gts.iter().enumerate() {
                for h in &s.gts[a + 1..] {
                    assert_eq!(area_iou(&g.bbox, &h.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn infeasible_scene_is_rejected() {
        let cfg = SceneConfig { width: 20, height: 20, max_size: 32.0, ..Default::default() };
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::Config(_))));
        let cfg = SceneConfig { rho: 1.5, ..Default::default() };
        assert!(generate_scene(&cfg, 0).is_err());
    }

    #[test]
    fn rendered_map_marks_objects() {
        let b = BoundingBox::new(10.0, 10.0, 20.0, 30.0);
        let f = render(40, 40, &[b]).unwrap();
        assert_eq!(f.get(20, 15, 0), 1.0);
        assert_eq!(f.get(20, 15, 1), 1.0);
        assert_eq!(f.get(2, 2, 0), 0.0);
        assert_eq!(f.get(2, 2, 1), 0.0);
        assert_eq!(f.get(20, 10, 0), 0.5);
    }

    fn gts() -> Vec<GroundTruthBox> {
        [
            BoundingBox::new(10.0, 10.0, 40.0, 30.0),
            BoundingBox::new(50.0, 5.0, 70.0, 45.0),
            BoundingBox::new(5.0, 50.0, 35.0, 62.0),
        ]
        .into_iter()
        .enumerate()
        .map(|(k, bbox)| GroundTruthBox { bbox, class_id: 0, object_id: k as u64 })
        .collect()
    }

    #[test]
    fn zero_jitter_reproduces_ground_truth() {
        let cfg = AugmentConfig { shift: 0.0, log_scale: 0.0, aspect: 0.0, samples_per_gt: 5, max_draws: 50, ..Default::default() };
        let out = augment_ground_truth(&gts(), &cfg, None, &mut rng::split(1, 0)).unwrap();
        assert_eq!(out.samples.len(), 15);
        assert!(out.skipped.is_empty());
        for s in &out.samples {
            assert_eq!(s.bbox, s.gt.bbox);
            assert_eq!(s.iou, 1.0);
        }
    }

    #[test]
    fn augmented_labels_are_filtered_and_exact() {
        let cfg = AugmentConfig { aspect: 0.2, ..Default::default() };
        let out = augment_ground_truth(&gts(), &cfg, Some((80.0, 80.0)), &mut rng::split(2, 0)).unwrap();
        assert_eq!(out.samples.len(), 3 * cfg.samples_per_gt);
        for s in &out.samples {
            assert!(s.iou >= cfg.omega_train);
            assert!((s.iou - area_iou(&s.bbox, &s.gt.bbox)).abs() < 1e-12);
            assert!(s.bbox.x1 <= 80.0 && s.bbox.y1 <= 80.0 && s.bbox.x0 >= 0.0 && s.bbox.y0 >= 0.0);
        }
    }

    #[test]
    fn augmented_iou_histogram_is_flat() {
        let cfg = AugmentConfig { samples_per_gt: 3334, ..Default::default() };
        let out = augment_ground_truth(&gts(), &cfg, None, &mut rng::split(3, 0)).unwrap();
        assert!(out.samples.len() >= 10_000);
        let mut hist = [0usize; 10];
        for s in &out.samples {
            hist[(((s.iou - 0.5) / 0.05).floor() as usize).min(9)] += 1;
        }
        let (max, min) = (*hist.iter().max().unwrap(), *hist.iter().min().unwrap());
        assert!(min > 0 && max as f64 / min as f64 <= 1.5, "{hist:?}");
    }

    #[test]
    fn unreachable_ground_truth_is_skipped() {
        let cfg = AugmentConfig { samples_per_gt: 2, max_draws: 20, ..Default::default() };
        let tiny = GroundTruthBox { bbox: BoundingBox::new(-50.0, -50.0, -40.0, -40.0), class_id: 0, object_id: 7 };
        let out = augment_ground_truth(&[tiny], &cfg, Some((10.0, 10.0)), &mut rng::split(4, 0)).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.skipped, vec![7]);
        assert!(augment_ground_truth(&[], &cfg, None, &mut rng::split(4, 0)).is_err());
    }

    #[test]
    fn misalignment_of_true_iou_is_perfect() {
        let g = gts();
        let dets: Vec<_> = (0..20)
            .map(|k| {
                let b = g[0].bbox.translate(0.3 * k as f64, 0.0);
                Detection::new(b, 0, 0.5).with_loc(area_iou(&b, &g[0].bbox))
            })
            .collect();
        let r = misalignment_report(&dets, &g, ConfidenceField::Loc).unwrap();
        assert!((r.pearson - 1.0).abs() < 1e-12);
        assert!(r.points.iter().all(|p| p.1 > 0.5));
    }

    #[test]
    fn independent_confidence_is_uncorrelated() {
        let mut r = rng::split(5, 0);
        let pts: Vec<_> = (0..10_000).map(|_| (r.random::<f64>(), r.random_range(0.5..1.0))).collect();
        assert!(MisalignmentReport::from_points(pts).unwrap().pearson.abs() < 0.05);
    }

    #[test]
    fn too_few_points_is_undefined() {
        let g = gts();
        let d = [Detection::new(g[0].bbox, 0, 0.5)];
        assert!(matches!(misalignment_report(&d, &g, ConfidenceField::Cls), Err(Error::Undefined(_))));
        assert!(misalignment_report(&d, &g, ConfidenceField::Loc).is_err());
    }
}
