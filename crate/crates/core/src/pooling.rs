//! Precise RoI pooling and the quantized / sampled baselines.
//!
//! The interpolated surface is `f(x, y) = sum_ij w_ij * hat(x - j) * hat(y - i)`,
//! so its integral over a rectangle factorizes: each grid point contributes
//! `w_ij * Kx(j) * Ky(i)` where `Kx(j)` is the integral of `hat(x - j)` over
//! `[x1, x2]`. Those 1-D integrals are differences of the hat antiderivative,
//! a piecewise quadratic. Edge derivatives follow by differentiating the
//! integration limits.
//!
//! Sums are taken relative to a reference value drawn from the map, with
//! off-grid neighbours counted as zeros. The coefficient sums are analytically
//! exact (`sum Kx = x2 - x1`), so this changes nothing mathematically but makes
//! constant regions cancel to exactly zero in the gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::{hat, FeatureMap};
use crate::geometry::{BoundingBox, BoxGrad};

/// Smallest bin extent used as a divisor. Narrower bins are evaluated with
/// this extent and the result is flagged as clamped.
pub const MIN_BIN_EXTENT: f64 = 1e-6;

/// A pooling cell with continuous corners `(x1, y1)` (top-left) and `(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Bin {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.x2 > self.x1 && self.y2 > self.y1 {
            Ok(())
        } else {
            Err(Error::DegenerateBin {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            })
        }
    }
}

impl From<BoundingBox> for Bin {
    fn from(b: BoundingBox) -> Self {
        Self::new(b.x0, b.y0, b.x1, b.y1)
    }
}

/// Output resolution of RoI pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolGrid {
    pub k_h: usize,
    pub k_w: usize,
}

impl Default for PoolGrid {
    fn default() -> Self {
        Self { k_h: 7, k_w: 7 }
    }
}

impl PoolGrid {
    pub fn new(k_h: usize, k_w: usize) -> Result<Self> {
        let g = Self { k_h, k_w };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_h == 0 || self.k_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "pool grid must be at least 1x1, got {}x{}",
                self.k_h, self.k_w
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.k_h * self.k_w
    }

    /// Splits `roi` into `k_h x k_w` equal bins, row-major.
    pub fn bins(&self, roi: &BoundingBox) -> Vec<Bin> {
        let mut out = Vec::with_capacity(self.cells());
        for r in 0..self.k_h {
            let (y1, y2) = split(roi.y0, roi.y1, r, self.k_h);
            for c in 0..self.k_w {
                let (x1, x2) = split(roi.x0, roi.x1, c, self.k_w);
                out.push(Bin::new(x1, y1, x2, y2));
            }
        }
        out
    }
}

fn split(lo: f64, hi: f64, k: usize, n: usize) -> (f64, f64) {
    let len = hi - lo;
    let a = lo + len * k as f64 / n as f64;
    let b = if k + 1 == n {
        hi
    } else {
        lo + len * (k + 1) as f64 / n as f64
    };
    (a, b)
}

/// `k_h x k_w x C` pooled values, row-major in `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub grid: PoolGrid,
    pub channels: usize,
    pub values: Vec<f64>,
    /// Set when any bin was narrower than [`MIN_BIN_EXTENT`].
    pub clamped: bool,
}

impl PooledFeature {
    pub fn get(&self, row: usize, col: usize, c: usize) -> f64 {
        self.values[(row * self.grid.k_w + col) * self.channels + c]
    }
}

/// Integral of `hat(s)` over `(-inf, t]`.
#[inline]
fn hat_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t <= 0.0 {
        0.5 * (t + 1.0) * (t + 1.0)
    } else if t < 1.0 {
        1.0 - 0.5 * (1.0 - t) * (1.0 - t)
    } else {
        1.0
    }
}

/// Hat integrals over `[lo, hi]` for every grid index they can touch.
struct AxisWeights {
    start: i64,
    integral: Vec<f64>,
    at_lo: Vec<f64>,
    at_hi: Vec<f64>,
}

impl AxisWeights {
    fn new(lo: f64, hi: f64) -> Self {
        let start = lo.floor() as i64;
        let end = hi.ceil() as i64;
        let n = (end - start + 1) as usize;
        let mut integral = Vec::with_capacity(n);
        let mut at_lo = Vec::with_capacity(n);
        let mut at_hi = Vec::with_capacity(n);
        for m in start..=end {
            let mf = m as f64;
            integral.push(hat_cdf(hi - mf) - hat_cdf(lo - mf));
            at_lo.push(hat(lo - mf));
            at_hi.push(hat(hi - mf));
        }
        Self {
            start,
            integral,
            at_lo,
            at_hi,
        }
    }

    fn indices(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        (0..self.integral.len()).map(move |k| (k, self.start + k as i64))
    }

    fn end(&self) -> i64 {
        self.start + self.integral.len() as i64 - 1
    }
}

/// Everything needed to integrate the surface over one bin.
struct BinKernel {
    xs: AxisWeights,
    ys: AxisWeights,
    width: f64,
    height: f64,
    clamped: bool,
}

impl BinKernel {
    fn new(bin: &Bin) -> Result<Self> {
        bin.validate()?;
        let (w, h) = (bin.width(), bin.height());
        Ok(Self {
            xs: AxisWeights::new(bin.x1, bin.x2),
            ys: AxisWeights::new(bin.y1, bin.y2),
            width: w.max(MIN_BIN_EXTENT),
            height: h.max(MIN_BIN_EXTENT),
            clamped: w < MIN_BIN_EXTENT || h < MIN_BIN_EXTENT,
        })
    }

    /// Reference value per channel: a grid value inside the support, or zero
    /// when the support misses the grid entirely.
    fn reference(&self, fmap: &FeatureMap, c: usize) -> f64 {
        let (h, w) = (fmap.height() as i64, fmap.width() as i64);
        let rows_hit = self.ys.start < h && self.ys.end() >= 0;
        let cols_hit = self.xs.start < w && self.xs.end() >= 0;
        if rows_hit && cols_hit {
            fmap.get(
                self.ys.start.clamp(0, h - 1) as usize,
                self.xs.start.clamp(0, w - 1) as usize,
                c,
            )
        } else {
            0.0
        }
    }

    fn average(&self, fmap: &FeatureMap, c: usize) -> f64 {
        let r = self.reference(fmap, c);
        let mut acc = 0.0;
        for (a, i) in self.ys.indices() {
            let mut row = 0.0;
            for (b, j) in self.xs.indices() {
                row += self.xs.integral[b] * (fmap.get_padded(i, j, c) - r);
            }
            acc += self.ys.integral[a] * row;
        }
        r + acc / (self.width * self.height)
    }

    /// `(d/dx1, d/dy1, d/dx2, d/dy2)` of the bin average.
    fn coord_grad(&self, fmap: &FeatureMap, c: usize) -> [f64; 4] {
        let r = self.reference(fmap, c);
        let (w, h) = (self.width, self.height);
        let cx1: Vec<f64> = (0..self.xs.integral.len())
            .map(|b| self.xs.integral[b] / w - self.xs.at_lo[b])
            .collect();
        let cx2: Vec<f64> = (0..self.xs.integral.len())
            .map(|b| self.xs.at_hi[b] - self.xs.integral[b] / w)
            .collect();
        let cy1: Vec<f64> = (0..self.ys.integral.len())
            .map(|a| self.ys.integral[a] / h - self.ys.at_lo[a])
            .collect();
        let cy2: Vec<f64> = (0..self.ys.integral.len())
            .map(|a| self.ys.at_hi[a] - self.ys.integral[a] / h)
            .collect();

        let mut g = [0.0; 4];
        for (a, i) in self.ys.indices() {
            let ky = self.ys.integral[a];
            for (b, j) in self.xs.indices() {
                let d = fmap.get_padded(i, j, c) - r;
                if d == 0.0 {
                    continue;
                }
                let kx = self.xs.integral[b];
                g[0] += ky * cx1[b] * d;
                g[1] += kx * cy1[a] * d;
                g[2] += ky * cx2[b] * d;
                g[3] += kx * cy2[a] * d;
            }
        }
        let area = w * h;
        g.map(|v| v / area)
    }
}

/// Exact average of channel `c` of the interpolated surface over `bin`.
pub fn prpool_bin(fmap: &FeatureMap, bin: &Bin, c: usize) -> Result<f64> {
    fmap.check_channel(c)?;
    Ok(BinKernel::new(bin)?.average(fmap, c))
}

/// Analytic gradient of [`prpool_bin`] with respect to `(x1, y1, x2, y2)`.
///
/// For the left edge this is `PrPool / (x2 - x1) - L(x1) / area`, where `L(x1)`
/// is the line integral of the surface along `x = x1` between `y1` and `y2`.
/// The other edges follow the same pattern, with the sign flipped on the far
/// edges.
pub fn prpool_grad_coords(fmap: &FeatureMap, bin: &Bin, c: usize) -> Result<[f64; 4]> {
    fmap.check_channel(c)?;
    Ok(BinKernel::new(bin)?.coord_grad(fmap, c))
}

/// One entry of the sparse gradient with respect to feature values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureGrad {
    pub i: usize,
    pub j: usize,
    pub c: usize,
    pub grad: f64,
}

/// Gradient of `upstream * prpool_bin` with respect to the grid values of
/// channel `c`. Only on-grid points within distance 1 of the bin appear.
pub fn prpool_grad_features(
    fmap: &FeatureMap,
    bin: &Bin,
    c: usize,
    upstream: f64,
) -> Result<Vec<FeatureGrad>> {
    fmap.check_channel(c)?;
    let k = BinKernel::new(bin)?;
    let scale = upstream / (k.width * k.height);
    let (h, w) = (fmap.height() as i64, fmap.width() as i64);
    let mut out = Vec::new();
    for (a, i) in k.ys.indices() {
        if i < 0 || i >= h {
            continue;
        }
        for (b, j) in k.xs.indices() {
            if j < 0 || j >= w {
                continue;
            }
            let g = k.ys.integral[a] * k.xs.integral[b] * scale;
            if g != 0.0 {
                out.push(FeatureGrad {
                    i: i as usize,
                    j: j as usize,
                    c,
                    grad: g,
                });
            }
        }
    }
    Ok(out)
}

/// Precise RoI pooling: `roi` split into equal bins, each averaged exactly.
pub fn prpool_roi(fmap: &FeatureMap, roi: &BoundingBox, grid: PoolGrid) -> Result<PooledFeature> {
    roi.validate()?;
    grid.validate()?;
    let channels = fmap.channels();
    let mut values = Vec::with_capacity(grid.cells() * channels);
    let mut clamped = false;
    for bin in grid.bins(roi) {
        let k = BinKernel::new(&bin)?;
        clamped |= k.clamped;
        for c in 0..channels {
            values.push(k.average(fmap, c));
        }
    }
    Ok(PooledFeature {
        grid,
        channels,
        values,
        clamped,
    })
}

/// Backpropagates `upstream` (one value per pooled output) through
/// [`prpool_roi`] to the RoI coordinates `(x0, y0, x1, y1)`.
pub fn prpool_roi_backward(
    fmap: &FeatureMap,
    roi: &BoundingBox,
    grid: PoolGrid,
    upstream: &[f64],
) -> Result<BoxGrad> {
    roi.validate()?;
    grid.validate()?;
    let channels = fmap.channels();
    if upstream.len() != grid.cells() * channels {
        return Err(Error::InvalidArgument(format!(
            "expected {} upstream values, got {}",
            grid.cells() * channels,
            upstream.len()
        )));
    }
    let mut g = [0.0; 4];
    for (n, bin) in grid.bins(roi).iter().enumerate() {
        let (row, col) = (n / grid.k_w, n % grid.k_w);
        let k = BinKernel::new(bin)?;
        let mut gb = [0.0; 4];
        for c in 0..channels {
            let u = upstream[n * channels + c];
            if u == 0.0 {
                continue;
            }
            let d = k.coord_grad(fmap, c);
            for (acc, v) in gb.iter_mut().zip(d) {
                *acc += u * v;
            }
        }
        // bin edges are affine in the roi edges
        let (lx, hx) = (col as f64 / grid.k_w as f64, (col + 1) as f64 / grid.k_w as f64);
        let (ly, hy) = (row as f64 / grid.k_h as f64, (row + 1) as f64 / grid.k_h as f64);
        g[0] += gb[0] * (1.0 - lx) + gb[2] * (1.0 - hx);
        g[2] += gb[0] * lx + gb[2] * hx;
        g[1] += gb[1] * (1.0 - ly) + gb[3] * (1.0 - hy);
        g[3] += gb[1] * ly + gb[3] * hy;
    }
    Ok(g)
}

/// Reduction applied by quantized RoI pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizedMode {
    #[default]
    Average,
    Max,
}

/// Classic RoI pooling: the RoI is rounded to the integer grid and every bin
/// reduces the grid points it encloses. Empty bins yield zero.
pub fn roipool_quantized(
    fmap: &FeatureMap,
    roi: &BoundingBox,
    grid: PoolGrid,
    mode: QuantizedMode,
) -> Result<PooledFeature> {
    roi.validate()?;
    grid.validate()?;
    let (h, w) = (fmap.height() as i64, fmap.width() as i64);
    let channels = fmap.channels();
    let sx = roi.x0.round() as i64;
    let sy = roi.y0.round() as i64;
    let ex = roi.x1.round() as i64;
    let ey = roi.y1.round() as i64;
    let roi_w = (ex - sx + 1).max(1) as f64;
    let roi_h = (ey - sy + 1).max(1) as f64;
    let bin_w = roi_w / grid.k_w as f64;
    let bin_h = roi_h / grid.k_h as f64;

    let mut values = Vec::with_capacity(grid.cells() * channels);
    for r in 0..grid.k_h {
        let i0 = ((r as f64 * bin_h).floor() as i64 + sy).clamp(0, h);
        let i1 = (((r + 1) as f64 * bin_h).ceil() as i64 + sy).clamp(0, h);
        for col in 0..grid.k_w {
            let j0 = ((col as f64 * bin_w).floor() as i64 + sx).clamp(0, w);
            let j1 = (((col + 1) as f64 * bin_w).ceil() as i64 + sx).clamp(0, w);
            for c in 0..channels {
                let mut sum = 0.0;
                let mut max = f64::NEG_INFINITY;
                let mut count = 0usize;
                for i in i0..i1 {
                    for j in j0..j1 {
                        let v = fmap.get(i as usize, j as usize, c);
                        sum += v;
                        max = max.max(v);
                        count += 1;
                    }
                }
                values.push(match (count, mode) {
                    (0, _) => 0.0,
                    (_, QuantizedMode::Average) => sum / count as f64,
                    (_, QuantizedMode::Max) => max,
                });
            }
        }
    }
    Ok(PooledFeature {
        grid,
        channels,
        values,
        clamped: false,
    })
}

/// RoI Align: each bin averages an `n_samples x n_samples` lattice of bilinear
/// samples placed at the centres of a regular subdivision of the bin.
pub fn roialign(
    fmap: &FeatureMap,
    roi: &BoundingBox,
    grid: PoolGrid,
    n_samples: usize,
) -> Result<PooledFeature> {
    roi.validate()?;
    grid.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let channels = fmap.channels();
    let n = n_samples as f64;
    let mut values = Vec::with_capacity(grid.cells() * channels);
    for bin in grid.bins(roi) {
        for c in 0..channels {
            let mut sum = 0.0;
            for sy in 0..n_samples {
                let y = bin.y1 + (sy as f64 + 0.5) * bin.height() / n;
                for sx in 0..n_samples {
                    let x = bin.x1 + (sx as f64 + 0.5) * bin.width() / n;
                    sum += fmap.sample_unchecked(x, y, c);
                }
            }
            values.push(sum / (n * n));
        }
    }
    Ok(PooledFeature {
        grid,
        channels,
        values,
        clamped: false,
    })
}

/// Midpoint Riemann sum of the surface over `bin`, divided by the bin area.
/// Each axis uses `ceil(extent * resolution)` equal steps (at least one).
pub fn riemann_oracle(fmap: &FeatureMap, bin: &Bin, c: usize, resolution: usize) -> Result<f64> {
    fmap.check_channel(c)?;
    bin.validate()?;
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be >= 1".into()));
    }
    let nx = ((bin.width() * resolution as f64).ceil() as usize).max(1);
    let ny = ((bin.height() * resolution as f64).ceil() as usize).max(1);
    let (dx, dy) = (bin.width() / nx as f64, bin.height() / ny as f64);
    let mut total = 0.0;
    for a in 0..ny {
        let y = bin.y1 + (a as f64 + 0.5) * dy;
        let mut row = 0.0;
        for b in 0..nx {
            row += fmap.sample_unchecked(bin.x1 + (b as f64 + 0.5) * dx, y, c);
        }
        total += row;
    }
    Ok(total / (nx * ny) as f64)
}
