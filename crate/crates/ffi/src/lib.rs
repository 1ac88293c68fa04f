//! C ABI for `locconf`.
//!
//! Conventions:
//!
//! - Every fallible function returns an [`LcStatus`]; results go through out
//!   pointers that are written only on success.
//! - On failure, [`lc_last_error`] returns a message describing the most
//!   recent error on the calling thread.
//! - Feature maps and predictors are opaque handles owned by the caller and
//!   released with their `_free` function.
//! - Boxes and bins are pointers to 4 doubles in `(x0, y0, x1, y1)` corner order.
//! - Feature-map values are row-major `(row, column, channel)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use locconf::geometry::{iou, BoundingBox, Detection, GroundTruthBox};
use locconf::pooling::{prpool_bin, prpool_grad_coords, Bin};
use locconf::predictor::{IouPredictor, MlpIouPredictor, OracleIouPredictor};
use locconf::refine::{refine_items, RefineConfig};
use locconf::suppression::{self, NmsConfig, NmsVariant};
use locconf::{Error, FeatureMap};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A box or bin with non-positive extent or non-finite coordinates.
    Degenerate = 3,
    Io = 4,
    /// Malformed file contents.
    Format = 5,
    /// The output buffer cannot hold the result; the required length is reported.
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcNmsVariant {
    Traditional = 0,
    SoftLinear = 1,
    SoftGaussian = 2,
    IouGuided = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LcNmsConfig {
    pub variant: LcNmsVariant,
    pub omega_nms: f64,
    pub sigma: f64,
    pub score_floor: f64,
    pub per_class: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LcRefineConfig {
    pub steps: u32,
    pub lambda: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub rollback_on_degrade: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcDetection {
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub cls_score: f64,
    /// Localization confidence; read only when `has_loc_score` is set.
    pub loc_score: f64,
    pub has_loc_score: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcGroundTruth {
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub object_id: u64,
}

/// Opaque feature map.
pub struct LcFeatureMap(FeatureMap);

/// Opaque IoU predictor.
pub struct LcPredictor(Box<dyn IouPredictor>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: LcStatus, msg: impl Into<String>) -> LcStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> LcStatus {
    match e {
        Error::DegenerateBox { .. } | Error::DegenerateBin { .. } => LcStatus::Degenerate,
        Error::Io { .. } | Error::Stream(_) => LcStatus::Io,
        Error::Format { .. } | Error::Json(_) => LcStatus::Format,
        _ => LcStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), LcStatus>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LcStatus::Panic, msg)
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, LcStatus>;
}

impl<T> OrStatus<T> for locconf::Result<T> {
    fn or_status(self) -> Result<T, LcStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, LcStatus> {
    p.as_ref().ok_or_else(|| fail(LcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], LcStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LcStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, LcStatus> {
    p.as_mut().ok_or_else(|| fail(LcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, LcStatus> {
    if p.is_null() {
        return Err(fail(LcStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(LcStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn quad(p: *const f64, name: &str) -> Result<[f64; 4], LcStatus> {
    let s = slice(p, 4, name)?;
    Ok([s[0], s[1], s[2], s[3]])
}

fn checked_box(a: &[f64; 4]) -> Result<BoundingBox, LcStatus> {
    BoundingBox::try_new(a[0], a[1], a[2], a[3]).or_status()
}

/// Message of the last error on this thread; empty if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn lc_nms_config_default() -> LcNmsConfig {
    let d = NmsConfig::default();
    LcNmsConfig {
        variant: LcNmsVariant::Traditional,
        omega_nms: d.omega_nms,
        sigma: d.sigma,
        score_floor: d.score_floor,
        per_class: d.per_class,
    }
}

#[no_mangle]
pub extern "C" fn lc_refine_config_default() -> LcRefineConfig {
    let d = RefineConfig::default();
    LcRefineConfig {
        steps: d.steps as u32,
        lambda: d.lambda,
        omega1: d.omega1,
        omega2: d.omega2,
        rollback_on_degrade: d.rollback_on_degrade,
    }
}

/// Creates a feature map from `height * width * channels` values.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out_map` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_featmap_new(
    height: usize,
    width: usize,
    channels: usize,
    values: *const f64,
    len: usize,
    out_map: *mut *mut LcFeatureMap,
) -> LcStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        let o = out(out_map, "out_map")?;
        let f = FeatureMap::new(height, width, channels, v.to_vec()).or_status()?;
        *o = Box::into_raw(Box::new(LcFeatureMap(f)));
        Ok(())
    })
}

/// Loads a `.prfm` feature map.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out_map` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_featmap_load(file: *const c_char, out_map: *mut *mut LcFeatureMap) -> LcStatus {
    guard(|| {
        let p = path(file)?;
        let o = out(out_map, "out_map")?;
        let f = FeatureMap::load(p).or_status()?;
        *o = Box::into_raw(Box::new(LcFeatureMap(f)));
        Ok(())
    })
}

/// # Safety
/// `map` must come from `lc_featmap_new`/`lc_featmap_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_featmap_free(map: *mut LcFeatureMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `map` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_featmap_dims(
    map: *const LcFeatureMap,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> LcStatus {
    guard(|| {
        let f = &deref(map, "map")?.0;
        *out(height, "height")? = f.height();
        *out(width, "width")? = f.width();
        *out(channels, "channels")? = f.channels();
        Ok(())
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `a` and `b` must point to 4 doubles; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_iou(a: *const f64, b: *const f64, result: *mut f64) -> LcStatus {
    guard(|| {
        let a = checked_box(&quad(a, "a")?)?;
        let b = checked_box(&quad(b, "b")?)?;
        let r = out(result, "result")?;
        *r = iou(&a, &b).or_status()?;
        Ok(())
    })
}

/// Exact average of the interpolated map over `bin = (x1, y1, x2, y2)`.
///
/// # Safety
/// `map` must be a live handle, `bin` must point to 4 doubles and `result`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_prpool_bin(
    map: *const LcFeatureMap,
    bin: *const f64,
    channel: usize,
    result: *mut f64,
) -> LcStatus {
    guard(|| {
        let f = &deref(map, "map")?.0;
        let b = quad(bin, "bin")?;
        let r = out(result, "result")?;
        *r = prpool_bin(f, &Bin::new(b[0], b[1], b[2], b[3]), channel).or_status()?;
        Ok(())
    })
}

/// Gradient of `lc_prpool_bin` with respect to `(x1, y1, x2, y2)`.
///
/// # Safety
/// As for `lc_prpool_bin`, with `grad` pointing to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_prpool_grad(
    map: *const LcFeatureMap,
    bin: *const f64,
    channel: usize,
    grad: *mut f64,
) -> LcStatus {
    guard(|| {
        let f = &deref(map, "map")?.0;
        let b = quad(bin, "bin")?;
        if grad.is_null() {
            return Err(fail(LcStatus::NullPointer, "grad is null"));
        }
        let g = prpool_grad_coords(f, &Bin::new(b[0], b[1], b[2], b[3]), channel).or_status()?;
        std::slice::from_raw_parts_mut(grad, 4).copy_from_slice(&g);
        Ok(())
    })
}

/// Predictor returning the true IoU against the given ground truth.
///
/// # Safety
/// `gts` must point to `n` readable records; `out_predictor` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_predictor_oracle_new(
    gts: *const LcGroundTruth,
    n: usize,
    out_predictor: *mut *mut LcPredictor,
) -> LcStatus {
    guard(|| {
        let g = slice(gts, n, "gts")?;
        let o = out(out_predictor, "out_predictor")?;
        let boxes = g
            .iter()
            .map(|r| {
                Ok(GroundTruthBox {
                    bbox: checked_box(&r.bbox)?,
                    class_id: r.class_id,
                    object_id: r.object_id,
                })
            })
            .collect::<Result<Vec<_>, LcStatus>>()?;
        let p = OracleIouPredictor::new(boxes).or_status()?;
        *o = Box::into_raw(Box::new(LcPredictor(Box::new(p))));
        Ok(())
    })
}

/// Loads a trained IoU head checkpoint.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out_predictor` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_predictor_load(file: *const c_char, out_predictor: *mut *mut LcPredictor) -> LcStatus {
    guard(|| {
        let p = path(file)?;
        let o = out(out_predictor, "out_predictor")?;
        let head = MlpIouPredictor::load(p).or_status()?;
        *o = Box::into_raw(Box::new(LcPredictor(Box::new(head))));
        Ok(())
    })
}

/// # Safety
/// `predictor` must come from an `lc_predictor_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_predictor_free(predictor: *mut LcPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Predicted IoU of `bbox` on `map`.
///
/// # Safety
/// Handles must be live; `bbox` must point to 4 doubles and `result` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lc_predictor_value(
    predictor: *const LcPredictor,
    map: *const LcFeatureMap,
    bbox: *const f64,
    class_id: u32,
    result: *mut f64,
) -> LcStatus {
    guard(|| {
        let p = &deref(predictor, "predictor")?.0;
        let f = &deref(map, "map")?.0;
        let b = checked_box(&quad(bbox, "bbox")?)?;
        let r = out(result, "result")?;
        *r = p.value(f, &b, class_id).or_status()?;
        Ok(())
    })
}

/// Non-maximum suppression. Writes the kept detections to `kept` and their
/// count to `kept_len`. If `capacity` is too small, nothing is written except
/// `kept_len`, which then holds the required capacity.
///
/// # Safety
/// `dets` must point to `n` records, `kept` to `capacity` writable records
/// (may be null when `capacity` is 0), `cfg` and `kept_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_nms(
    dets: *const LcDetection,
    n: usize,
    cfg: *const LcNmsConfig,
    kept: *mut LcDetection,
    capacity: usize,
    kept_len: *mut usize,
) -> LcStatus {
    guard(|| {
        let d = slice(dets, n, "dets")?;
        let c = deref(cfg, "cfg")?;
        let len = out(kept_len, "kept_len")?;
        let input = d
            .iter()
            .map(|r| {
                let det = Detection::new(checked_box(&r.bbox)?, r.class_id, r.cls_score);
                Ok(if r.has_loc_score { det.with_loc(r.loc_score) } else { det })
            })
            .collect::<Result<Vec<_>, LcStatus>>()?;
        let config = NmsConfig {
            omega_nms: c.omega_nms,
            variant: match c.variant {
                LcNmsVariant::Traditional => NmsVariant::Traditional,
                LcNmsVariant::SoftLinear => NmsVariant::SoftLinear,
                LcNmsVariant::SoftGaussian => NmsVariant::SoftGaussian,
                LcNmsVariant::IouGuided => NmsVariant::IouGuided,
            },
            sigma: c.sigma,
            score_floor: c.score_floor,
            per_class: c.per_class,
        };
        config.validate().or_status()?;
        let result = suppression::run(&input, &config).or_status()?;
        *len = result.len();
        if result.len() > capacity {
            return Err(fail(
                LcStatus::BufferTooSmall,
                format!("{} detections kept, capacity {capacity}", result.len()),
            ));
        }
        if result.is_empty() {
            return Ok(());
        }
        if kept.is_null() {
            return Err(fail(LcStatus::NullPointer, "kept is null"));
        }
        for (k, r) in result.iter().enumerate() {
            ptr::write(
                kept.add(k),
                LcDetection {
                    bbox: r.bbox.to_array(),
                    class_id: r.class_id,
                    cls_score: r.cls_score,
                    loc_score: r.loc_score.unwrap_or(0.0),
                    has_loc_score: r.loc_score.is_some(),
                },
            );
        }
        Ok(())
    })
}

/// Refines `n` boxes by gradient ascent on the predictor. `boxes` holds
/// `4 * n` doubles and is updated in place; `scores` (may be null) receives
/// the final predicted IoU of each box.
///
/// # Safety
/// Handles must be live; `boxes` must point to `4 * n` writable doubles,
/// `class_ids` to `n` values (or be null for class 0) and `scores` to `n`
/// writable doubles or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_refine(
    predictor: *const LcPredictor,
    map: *const LcFeatureMap,
    cfg: *const LcRefineConfig,
    boxes: *mut f64,
    class_ids: *const u32,
    n: usize,
    scores: *mut f64,
) -> LcStatus {
    guard(|| {
        let p = &deref(predictor, "predictor")?.0;
        let f = &deref(map, "map")?.0;
        let c = deref(cfg, "cfg")?;
        if n == 0 {
            return Ok(());
        }
        if boxes.is_null() {
            return Err(fail(LcStatus::NullPointer, "boxes is null"));
        }
        let b = std::slice::from_raw_parts_mut(boxes, 4 * n);
        let classes = if class_ids.is_null() { None } else { Some(std::slice::from_raw_parts(class_ids, n)) };
        let items = b
            .chunks_exact(4)
            .enumerate()
            .map(|(k, q)| Ok((checked_box(&[q[0], q[1], q[2], q[3]])?, classes.map_or(0, |c| c[k]))))
            .collect::<Result<Vec<_>, LcStatus>>()?;
        let config = RefineConfig {
            steps: c.steps as usize,
            lambda: c.lambda,
            omega1: c.omega1,
            omega2: c.omega2,
            rollback_on_degrade: c.rollback_on_degrade,
        };
        let result = refine_items(&items, f, p.as_ref(), &config).or_status()?;
        for (q, r) in b.chunks_exact_mut(4).zip(&result.boxes) {
            q.copy_from_slice(&r.to_array());
        }
        if !scores.is_null() {
            std::slice::from_raw_parts_mut(scores, n).copy_from_slice(&result.scores);
        }
        Ok(())
    })
}
