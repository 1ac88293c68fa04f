//! Axis-aligned boxes, IoU and its gradient, and the log-scale delta
//! parameterization.
//!
//! Gradients with respect to a box are always ordered `(x0, y0, x1, y1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient of a scalar with respect to `(x0, y0, x1, y1)`.
pub type BoxGrad = [f64; 4];

/// Axis-aligned box in continuous pixel coordinates, top-left `(x0, y0)` and
/// bottom-right `(x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Builds a box and rejects it unless it has positive, finite extent.
    pub fn try_new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self::new(x0, y0, x1, y1);
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x1 > self.x0 && self.y1 > self.y0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::DegenerateBox {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
            })
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    /// Scales every coordinate about the origin.
    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }

    /// Clips the box to `[0, width] x [0, height]`. The result may be degenerate.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self::new(
            self.x0.clamp(0.0, width),
            self.y0.clamp(0.0, height),
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
        )
    }

    /// Adds `step` component-wise, in `(x0, y0, x1, y1)` order.
    pub fn offset(&self, step: &BoxGrad) -> Self {
        Self::new(
            self.x0 + step[0],
            self.y0 + step[1],
            self.x1 + step[2],
            self.y1 + step[3],
        )
    }
}

/// A scored detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_id: u32,
    /// Classification confidence in `[0, 1]`.
    pub cls_score: f64,
    /// Localization confidence (predicted IoU) in `[0, 1]`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc_score: Option<f64>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class_id: u32, cls_score: f64) -> Self {
        Self {
            bbox,
            class_id,
            cls_score,
            loc_score: None,
        }
    }

    pub fn with_loc(mut self, loc_score: f64) -> Self {
        self.loc_score = Some(loc_score);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.cls_score) {
            return Err(Error::InvalidArgument(format!(
                "cls_score {} outside [0, 1]",
                self.cls_score
            )));
        }
        if let Some(l) = self.loc_score {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidArgument(format!(
                    "loc_score {l} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_id: u32,
    pub object_id: u64,
}

/// Log-scale box transform `(dcx / w, dcy / h, log(w' / w), log(h' / h))`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            dx: a[0],
            dy: a[1],
            dw: a[2],
            dh: a[3],
        }
    }
}

/// Intersection over union. Boxes touching along an edge have IoU 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// [`iou`] without validation; callers guarantee both boxes are valid.
pub fn iou_unchecked(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x1.min(b.x1) - a.x0.max(b.x0);
    let ih = a.y1.min(b.y1) - a.y0.max(b.y0);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// Analytic IoU gradient with respect to the first box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouGradient {
    pub grad: BoxGrad,
    /// Set when the boxes do not overlap, in which case `grad` is zero.
    pub flat: bool,
}

/// Gradient of `iou(a, fixed)` with respect to the coordinates of `a`.
///
/// Where an edge of `a` coincides with the matching edge of `fixed` the
/// derivative is one-sided: the side on which `a` grows.
pub fn iou_grad(a: &BoundingBox, fixed: &BoundingBox) -> Result<IouGradient> {
    a.validate()?;
    fixed.validate()?;

    let iw = a.x1.min(fixed.x1) - a.x0.max(fixed.x0);
    let ih = a.y1.min(fixed.y1) - a.y0.max(fixed.y0);
    if iw <= 0.0 || ih <= 0.0 {
        return Ok(IouGradient {
            grad: [0.0; 4],
            flat: true,
        });
    }

    // d(iw)/d(x0, x1) and d(ih)/d(y0, y1)
    let diw = [
        if a.x0 > fixed.x0 { -1.0 } else { 0.0 },
        if a.x1 < fixed.x1 { 1.0 } else { 0.0 },
    ];
    let dih = [
        if a.y0 > fixed.y0 { -1.0 } else { 0.0 },
        if a.y1 < fixed.y1 { 1.0 } else { 0.0 },
    ];
    let (w, h) = (a.width(), a.height());
    let d_inter = [diw[0] * ih, dih[0] * iw, diw[1] * ih, dih[1] * iw];
    let d_area = [-h, -w, h, w];

    let inter = iw * ih;
    let union = a.area() + fixed.area() - inter;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        grad[k] = (d_inter[k] * union - inter * d_union) / (union * union);
    }
    Ok(IouGradient { grad, flat: false })
}

/// Delta that maps `src` onto `dst`.
pub fn encode_delta(src: &BoundingBox, dst: &BoundingBox) -> Result<BoxDelta> {
    src.validate()?;
    dst.validate()?;
    let (sw, sh) = (src.width(), src.height());
    let (scx, scy) = src.center();
    let (dcx, dcy) = dst.center();
    Ok(BoxDelta {
        dx: (dcx - scx) / sw,
        dy: (dcy - scy) / sh,
        dw: (dst.width() / sw).ln(),
        dh: (dst.height() / sh).ln(),
    })
}

/// Applies `delta` to `src`.
pub fn decode_delta(src: &BoundingBox, delta: &BoxDelta) -> Result<BoundingBox> {
    src.validate()?;
    let (sw, sh) = (src.width(), src.height());
    let (scx, scy) = src.center();
    let out = BoundingBox::from_center(
        scx + delta.dx * sw,
        scy + delta.dy * sh,
        sw * delta.dw.exp(),
        sh * delta.dh.exp(),
    );
    out.validate()?;
    Ok(out)
}

/// Multiplies x-gradients by the box width and y-gradients by its height,
/// which turns plain gradient ascent into ascent in log-scaled coordinates.
pub fn scale_gradient(grad: &BoxGrad, bbox: &BoundingBox) -> Result<BoxGrad> {
    bbox.validate()?;
    let (w, h) = (bbox.width(), bbox.height());
    Ok([grad[0] * w, grad[1] * h, grad[2] * w, grad[3] * h])
}
