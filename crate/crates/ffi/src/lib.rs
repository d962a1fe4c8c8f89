//! C ABI over `paxkit`.
//!
//! Every fallible function returns a [`PaxStatus`]; on failure the reason is
//! kept per thread and can be fetched with [`pax_last_error`]. Models and
//! detection lists are opaque handles owned by the caller until freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use paxkit::axis::{decode_axis, encode_axis, AxisCodecConfig};
use paxkit::data::{Image, Scene};
use paxkit::geometry::{min_area_rect, rotated_iou, OrientedBox, Point};
use paxkit::matching::{hungarian, CostMatrix};
use paxkit::model::{load_checkpoint, OrientedDetr};
use paxkit::train::{detect, Detection};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    Panic = 5,
}

/// Rotated rectangle: center, side lengths, rotation of the `w` side in
/// radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PaxObb {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

/// One decoded detection in pixel coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PaxDetection {
    pub class_index: usize,
    pub score: f64,
    pub obb: PaxObb,
}

/// Opaque loaded model.
pub struct PaxModel {
    model: OrientedDetr,
}

/// Opaque list of detections.
pub struct PaxDetections {
    items: Vec<PaxDetection>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(PaxStatus, String);

fn fail<T>(status: PaxStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, records its error message and converts panics into
/// [`PaxStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PaxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PaxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PaxStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return fail(PaxStatus::NullPointer, format!("{name} is null"));
    }
    Ok(())
}

fn to_box(b: &PaxObb) -> Result<OrientedBox, Fail> {
    OrientedBox::new(b.cx, b.cy, b.w, b.h, b.theta).map_err(|e| Fail(PaxStatus::InvalidArgument, e.to_string()))
}

fn from_box(b: &OrientedBox) -> PaxObb {
    PaxObb { cx: b.cx, cy: b.cy, w: b.w, h: b.h, theta: b.theta }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pax_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pax_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Rotated IoU of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pax_rotated_iou(a: *const PaxObb, b: *const PaxObb, out: *mut f64) -> PaxStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(b, "b")?;
        non_null(out, "out")?;
        let (a, b) = (to_box(&*a)?, to_box(&*b)?);
        *out = rotated_iou(&a, &b);
        Ok(())
    })
}

/// Minimum-area rectangle of `n` points stored as interleaved `x, y`.
///
/// # Safety
/// `xy` must point to `2 * n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pax_min_area_rect(xy: *const f64, n: usize, out: *mut PaxObb) -> PaxStatus {
    guard(|| {
        non_null(xy, "xy")?;
        non_null(out, "out")?;
        let flat = std::slice::from_raw_parts(xy, 2 * n);
        let pts: Vec<Point> = flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        let rect = min_area_rect(&pts).map_err(|e| Fail(PaxStatus::InvalidArgument, e.to_string()))?;
        *out = from_box(&rect);
        Ok(())
    })
}

fn codec(n_bins: usize, sigma: f64) -> Result<AxisCodecConfig, Fail> {
    let cfg = AxisCodecConfig { n_bins, sigma, ..AxisCodecConfig::default() };
    cfg.validate().map_err(|e| Fail(PaxStatus::InvalidArgument, e.to_string()))?;
    Ok(cfg)
}

/// Four-peak axis label of direction `theta` (radians) into `out[0..n_bins]`.
///
/// # Safety
/// `out` must point to `n_bins` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pax_axis_encode(theta: f64, n_bins: usize, sigma: f64, out: *mut f64) -> PaxStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = codec(n_bins, sigma)?;
        let enc = encode_axis(theta, &cfg);
        std::slice::from_raw_parts_mut(out, n_bins).copy_from_slice(&enc.values);
        Ok(())
    })
}

/// Principal direction in `[0, pi/2)` of an encoding or logit vector.
///
/// # Safety
/// `values` must point to `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pax_axis_decode(values: *const f64, n: usize, out: *mut f64) -> PaxStatus {
    guard(|| {
        non_null(values, "values")?;
        non_null(out, "out")?;
        let dec = decode_axis(std::slice::from_raw_parts(values, n))
            .map_err(|e| Fail(PaxStatus::InvalidArgument, e.to_string()))?;
        *out = dec.principal_reduced;
        Ok(())
    })
}

/// Minimum-cost assignment of a row-major `rows x cols` matrix. Writes the
/// assigned column of each row to `row_to_col`, or -1 for unassigned rows.
///
/// # Safety
/// `costs` must point to `rows * cols` doubles and `row_to_col` to `rows`
/// writable integers.
#[no_mangle]
pub unsafe extern "C" fn pax_hungarian(costs: *const f64, rows: usize, cols: usize, row_to_col: *mut i64) -> PaxStatus {
    guard(|| {
        if rows == 0 {
            return Ok(());
        }
        non_null(row_to_col, "row_to_col")?;
        let out = std::slice::from_raw_parts_mut(row_to_col, rows);
        out.fill(-1);
        if cols == 0 {
            return Ok(());
        }
        non_null(costs, "costs")?;
        let data = std::slice::from_raw_parts(costs, rows * cols).to_vec();
        let pairs = hungarian(&CostMatrix::new(rows, cols, data))
            .map_err(|e| Fail(PaxStatus::InvalidArgument, e.to_string()))?;
        for (r, c) in pairs {
            out[r] = c as i64;
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `paxkit train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pax_model_load(path: *const c_char, out: *mut *mut PaxModel) -> PaxStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path =
            CStr::from_ptr(path).to_str().map_err(|_| Fail(PaxStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = load_checkpoint(Path::new(path)).map_err(|e| {
            let status = if matches!(e, paxkit::model::ModelError::Io(_)) { PaxStatus::Io } else { PaxStatus::Model };
            Fail(status, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(PaxModel { model }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from [`pax_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pax_model_free(model: *mut PaxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes the model predicts.
///
/// # Safety
/// `model` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn pax_model_num_classes(model: *const PaxModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.cfg.n_classes)
}

/// Runs the model on an RGB image of `height x width` pixels, row-major with
/// interleaved channels and values in `[0, 1]`. Detections scoring below
/// `threshold` are dropped.
///
/// # Safety
/// `model` must be a live handle, `rgb` must point to `height * width * 3`
/// doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pax_model_detect(
    model: *const PaxModel,
    rgb: *const f64,
    height: usize,
    width: usize,
    threshold: f64,
    out: *mut *mut PaxDetections,
) -> PaxStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(rgb, "rgb")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if height == 0 || width == 0 {
            return fail(PaxStatus::InvalidArgument, "image must be non-empty");
        }
        let model = &(*model).model;
        let data = std::slice::from_raw_parts(rgb, height * width * 3).to_vec();
        let scene =
            Scene { id: String::new(), image: Image { height, width, channels: 3, data }, annotations: Vec::new() };
        let codec = AxisCodecConfig { n_bins: model.cfg.n_bins, ..AxisCodecConfig::default() };
        let dets = detect(model, &scene, &codec, threshold).map_err(|e| Fail(PaxStatus::Model, e.to_string()))?;
        let items = dets
            .iter()
            .map(|d: &Detection| PaxDetection { class_index: d.class, score: d.score, obb: from_box(&d.rect) })
            .collect();
        *out = Box::into_raw(Box::new(PaxDetections { items }));
        Ok(())
    })
}

/// Number of detections in a list; 0 for NULL.
///
/// # Safety
/// `dets` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pax_detections_len(dets: *const PaxDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.items.len())
}

/// Copies detection `index` into `out`.
///
/// # Safety
/// `dets` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pax_detections_get(
    dets: *const PaxDetections,
    index: usize,
    out: *mut PaxDetection,
) -> PaxStatus {
    guard(|| {
        non_null(dets, "dets")?;
        non_null(out, "out")?;
        let items = &(*dets).items;
        match items.get(index) {
            Some(d) => {
                *out = *d;
                Ok(())
            }
            None => {
                fail(PaxStatus::InvalidArgument, format!("index {index} out of range for {} detections", items.len()))
            }
        }
    })
}

/// Releases a detection list. NULL is ignored.
///
/// # Safety
/// `dets` must come from [`pax_model_detect`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pax_detections_free(dets: *mut PaxDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}
