//! Self-check suites comparing analytic results against finite differences
//! and dense numerical integration. Used by the `gradcheck` command.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::featmap::FeatureMap;
use crate::geometry::{iou_grad, iou_unchecked, BoundingBox};
use crate::pooling::{prpool_bin, prpool_grad_coords, prpool_grad_features, riemann_oracle, Bin, PoolGrid};
use crate::predictor::{IouPredictor, MlpIouPredictor};
use crate::rng;

pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

fn suite(name: &'static str, errors: &[f64], tolerance: f64) -> SuiteReport {
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    SuiteReport {
        name,
        cases: errors.len(),
        max_error,
        tolerance,
        passed: errors.iter().all(|e| *e <= tolerance),
    }
}

fn random_map<R: Rng>(h: usize, w: usize, c: usize, rng: &mut R) -> Result<FeatureMap> {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_bin<R: Rng>(lo: f64, hi: f64, max_extent: f64, rng: &mut R) -> Bin {
    let x1 = rng.random_range(lo..hi);
    let y1 = rng.random_range(lo..hi);
    Bin::new(
        x1,
        y1,
        x1 + rng.random_range(0.1..max_extent),
        y1 + rng.random_range(0.1..max_extent),
    )
}

fn riemann_suite<R: Rng>(rng: &mut R) -> Result<SuiteReport> {
    let mut errors = Vec::new();
    for _ in 0..30 {
        let f = random_map(8, 8, 2, rng)?;
        let bin = random_bin(-1.0, 6.0, 2.5, rng);
        let c = rng.random_range(0..2);
        let exact = prpool_bin(&f, &bin, c)?;
        let approx = riemann_oracle(&f, &bin, c, 256)?;
        errors.push((exact - approx).abs() / (1.0 + approx.abs()));
    }
    Ok(suite("prpool_vs_riemann", &errors, 1e-4))
}

fn coord_fd_suite<R: Rng>(rng: &mut R, tolerance: f64) -> Result<SuiteReport> {
    const H: f64 = 1e-4;
    let mut errors = Vec::new();
    for _ in 0..100 {
        let f = random_map(8, 8, 1, rng)?;
        let bin = random_bin(-1.0, 6.0, 3.0, rng);
        let g = prpool_grad_coords(&f, &bin, 0)?;
        let mut worst = 0.0f64;
        for (k, gk) in g.iter().enumerate() {
            let shifted = |d: f64| {
                let mut a = [bin.x1, bin.y1, bin.x2, bin.y2];
                a[k] += d;
                prpool_bin(&f, &Bin::new(a[0], a[1], a[2], a[3]), 0)
            };
            let fd = (shifted(H)? - shifted(-H)?) / (2.0 * H);
            worst = worst.max((fd - gk).abs());
        }
        errors.push(worst);
    }
    Ok(suite("prpool_coord_fd", &errors, tolerance))
}

fn feature_fd_suite<R: Rng>(rng: &mut R) -> Result<SuiteReport> {
    const H: f64 = 1e-3;
    let mut errors = Vec::new();
    for _ in 0..30 {
        let f = random_map(6, 6, 1, rng)?;
        let bin = random_bin(-0.5, 4.0, 2.0, rng);
        let base = prpool_bin(&f, &bin, 0)?;
        let grads = prpool_grad_features(&f, &bin, 0, 1.0)?;
        let mut worst = 0.0f64;
        for g in &grads {
            let bumped = FeatureMap::from_fn(6, 6, 1, |i, j, c| f.get(i, j, c) + if (i, j, c) == (g.i, g.j, g.c) { H } else { 0.0 })?;
            let fd = (prpool_bin(&bumped, &bin, 0)? - base) / H;
            worst = worst.max((fd - g.grad).abs());
        }
        errors.push(worst);
    }
    Ok(suite("prpool_feature_fd", &errors, 1e-5))
}

fn constant_map_suite<R: Rng>(rng: &mut R) -> Result<SuiteReport> {
    let mut errors = Vec::new();
    for _ in 0..50 {
        let v = rng.random_range(-2.0..2.0);
        let f = FeatureMap::constant(10, 10, 1, v)?;
        let bin = random_bin(1.0, 5.0, 3.0, rng);
        let value_err = (prpool_bin(&f, &bin, 0)? - v).abs();
        let grad_err = prpool_grad_coords(&f, &bin, 0)?.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        errors.push(value_err.max(grad_err));
    }
    Ok(suite("constant_map_exact", &errors, 0.0))
}

fn iou_fd_suite<R: Rng>(rng: &mut R, tolerance: f64) -> Result<SuiteReport> {
    const H: f64 = 1e-5;
    let mut errors = Vec::new();
    while errors.len() < 100 {
        let a = BoundingBox::from_center(rng.random_range(10.0..30.0), rng.random_range(10.0..30.0), rng.random_range(4.0..12.0), rng.random_range(4.0..12.0));
        let b = BoundingBox::from_center(
            a.center().0 + rng.random_range(-0.4..0.4) * a.width(),
            a.center().1 + rng.random_range(-0.4..0.4) * a.height(),
            a.width() * rng.random_range(0.6..1.4),
            a.height() * rng.random_range(0.6..1.4),
        );
        let (pa, pb) = (a.to_array(), b.to_array());
        let near_kink = pa.iter().flat_map(|u| pb.iter().map(move |v| (u - v).abs())).any(|d| d < 1e-3);
        if near_kink || iou_unchecked(&a, &b) == 0.0 {
            continue;
        }
        let g = iou_grad(&a, &b)?.grad;
        let mut worst = 0.0f64;
        for k in 0..4 {
            let mut p = pa;
            let mut m = pa;
            p[k] += H;
            m[k] -= H;
            let fd = (iou_unchecked(&BoundingBox::from_array(p), &b) - iou_unchecked(&BoundingBox::from_array(m), &b)) / (2.0 * H);
            worst = worst.max((fd - g[k]).abs());
        }
        errors.push(worst);
    }
    Ok(suite("iou_grad_fd", &errors, tolerance))
}

fn mlp_chain_suite<R: Rng>(rng: &mut R, tolerance: f64) -> Result<SuiteReport> {
    const H: f64 = 1e-5;
    let f = random_map(16, 16, 2, rng)?;
    let head = MlpIouPredictor::init(PoolGrid::new(3, 3)?, 2, 8, rng)?;
    let mut errors = Vec::new();
    for _ in 0..50 {
        let x0 = rng.random_range(0.0..8.0);
        let y0 = rng.random_range(0.0..8.0);
        let b = BoundingBox::new(x0, y0, x0 + rng.random_range(2.0..7.0), y0 + rng.random_range(2.0..7.0));
        let g = head.grad_coords(&f, &b, 0)?;
        let mut worst = 0.0f64;
        for (k, gk) in g.iter().enumerate() {
            let mut p = b.to_array();
            let mut m = b.to_array();
            p[k] += H;
            m[k] -= H;
            let fd = (head.value(&f, &BoundingBox::from_array(p), 0)? - head.value(&f, &BoundingBox::from_array(m), 0)?) / (2.0 * H);
            worst = worst.max((fd - gk).abs());
        }
        errors.push(worst);
    }
    Ok(suite("mlp_chain_fd", &errors, tolerance))
}

/// Runs every suite. `tolerance` bounds the finite-difference comparisons;
/// the integration and exactness suites use fixed bounds.
pub fn run(seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let r = |k: u64| rng::split_indexed(seed, rng::stream::GRADCHECK, k);
    let suites = vec![
        riemann_suite(&mut r(0))?,
        coord_fd_suite(&mut r(1), tolerance)?,
        feature_fd_suite(&mut r(2))?,
        constant_map_suite(&mut r(3))?,
        iou_fd_suite(&mut r(4), tolerance)?,
        mlp_chain_suite(&mut r(5), tolerance)?,
    ];
    Ok(GradcheckReport { seed, suites })
}
