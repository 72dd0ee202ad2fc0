//! C ABI over `tilefuse`.
//!
//! Every fallible function returns a `TfStatus` and writes its result through
//! an out-pointer. On failure the out-pointer is left untouched and
//! `tf_last_error_message` describes the error for the calling thread.
//! Handles (`TfPlan`, `TfDetections`) and returned strings are owned by the
//! caller and must be released with the matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tilefuse::detmodel::{
    parse_detections_jsonl, parse_ground_truth, remap_set, write_detections_jsonl, DetectionSet, Frame, GtFormat,
};
use tilefuse::evalkit::{build_report, EvalConfig};
use tilefuse::fusion::{ensemble_fuse, FusionConfig};
use tilefuse::sampler::{plan_tiles, verify_coverage, PoissonConfig, TilePlan};
use tilefuse::{BBox, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    NotFound = 5,
    Io = 6,
    UnknownTile = 7,
    FrameMismatch = 8,
    UnknownSource = 9,
    NoGroundTruth = 10,
    OutOfRange = 11,
    Panic = 12,
    Other = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfFrame {
    TileLocal = 0,
    Global = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TfTile {
    pub id: u32,
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

/// One detection without its source name; `tile_id` is -1 when absent.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfDetection {
    pub bbox: TfBox,
    pub class_id: u32,
    pub score: f64,
    pub tile_id: i64,
}

/// Opaque tile plan.
pub struct TfPlan(TilePlan);

/// Opaque detection set.
pub struct TfDetections(DetectionSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TfStatus {
    match e {
        Error::InvalidBox { .. }
        | Error::Config(_)
        | Error::ClippedToNothing { .. }
        | Error::NoEvaluatedClasses
        | Error::ImageTooSmall { .. }
        | Error::InsufficientPool { .. } => TfStatus::InvalidArgument,
        Error::Parse { .. } | Error::Json(_) => TfStatus::Parse,
        Error::NotFound(_) | Error::MissingFile(_) => TfStatus::NotFound,
        Error::Io { .. } => TfStatus::Io,
        Error::UnknownTileId(_) => TfStatus::UnknownTile,
        Error::FrameMismatch { .. } => TfStatus::FrameMismatch,
        Error::UnknownSource(_) => TfStatus::UnknownSource,
        Error::NoGroundTruth(_) => TfStatus::NoGroundTruth,
        Error::OutOfBounds { .. } => TfStatus::OutOfRange,
        Error::InTile { source, .. } => status_of(source),
        _ => TfStatus::Other,
    }
}

struct Fail(TfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Fail>;

/// Runs `f`, recording any error or panic for `tf_last_error_message`.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside tilefuse".into());
            TfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err(Fail(TfStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn to_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(TfStatus::Other, "output contains a NUL byte".into()))
}

fn bbox(b: TfBox) -> FfiResult<BBox> {
    Ok(BBox::new(b.xmin, b.ymin, b.xmax, b.ymax)?)
}

fn frame(f: TfFrame) -> Frame {
    match f {
        TfFrame::TileLocal => Frame::TileLocal,
        TfFrame::Global => Frame::Global,
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next tilefuse call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn tf_iou(a: TfBox, b: TfBox, out: *mut f64) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = tilefuse::iou(&bbox(a)?, &bbox(b)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tf_eiou(a: TfBox, b: TfBox, out: *mut f64) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = tilefuse::eiou(&bbox(a)?, &bbox(b)?);
        Ok(())
    })
}

/// Plans tiles for an image. `radius <= 0` selects `min(tile_w, tile_h) / 2`;
/// `k == 0` selects the default candidate count.
#[no_mangle]
pub unsafe extern "C" fn tf_plan_tiles(
    image_w: u32,
    image_h: u32,
    tile_w: u32,
    tile_h: u32,
    radius: f64,
    k: u32,
    seed: u64,
    out: *mut *mut TfPlan,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        let radius = if radius > 0.0 {
            radius
        } else {
            tilefuse::sampler::default_radius(tile_w, tile_h)
        };
        let k = if k == 0 { tilefuse::sampler::DEFAULT_K } else { k };
        let cfg = PoissonConfig::new(radius, k, seed)?;
        let plan = plan_tiles(image_w, image_h, tile_w, tile_h, &cfg)?;
        *out = Box::into_raw(Box::new(TfPlan(plan)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tf_plan_from_json(json: *const c_char, out: *mut *mut TfPlan) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        let plan = TilePlan::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(TfPlan(plan)));
        Ok(())
    })
}

/// Number of tiles; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tf_plan_len(plan: *const TfPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.tiles.len())
}

#[no_mangle]
pub unsafe extern "C" fn tf_plan_tile(plan: *const TfPlan, index: usize, out: *mut TfTile) -> TfStatus {
    guard(|| {
        non_null(plan, "plan")?;
        non_null(out, "out")?;
        let t = (*plan).0.tiles.as_slice().get(index).ok_or_else(|| {
            Fail(TfStatus::OutOfRange, format!("tile index {index} out of range"))
        })?;
        *out = TfTile { id: t.id, x0: t.x0, y0: t.y0, w: t.w, h: t.h };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tf_plan_to_json(plan: *const TfPlan, out: *mut *mut c_char) -> TfStatus {
    guard(|| {
        non_null(plan, "plan")?;
        non_null(out, "out")?;
        *out = to_c_string((*plan).0.to_json())?;
        Ok(())
    })
}

/// Writes whether every pixel center of the image lies in some tile.
#[no_mangle]
pub unsafe extern "C" fn tf_plan_verify_coverage(plan: *const TfPlan, covered: *mut bool) -> TfStatus {
    guard(|| {
        non_null(plan, "plan")?;
        non_null(covered, "covered")?;
        *covered = verify_coverage(&(*plan).0).covered;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tf_plan_free(plan: *mut TfPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Parses detection JSONL in the given frame.
#[no_mangle]
pub unsafe extern "C" fn tf_detections_parse(
    jsonl: *const c_char,
    frame_kind: TfFrame,
    out: *mut *mut TfDetections,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = str_arg(jsonl, "jsonl")?;
        let set = parse_detections_jsonl(text.as_bytes(), frame(frame_kind))?;
        *out = Box::into_raw(Box::new(TfDetections(set)));
        Ok(())
    })
}

/// Number of detections; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tf_detections_len(set: *const TfDetections) -> usize {
    set.as_ref().map_or(0, |s| s.0.items.len())
}

#[no_mangle]
pub unsafe extern "C" fn tf_detections_get(
    set: *const TfDetections,
    index: usize,
    out: *mut TfDetection,
) -> TfStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        let d = (*set).0.items.as_slice().get(index).ok_or_else(|| {
            Fail(TfStatus::OutOfRange, format!("detection index {index} out of range"))
        })?;
        let [xmin, ymin, xmax, ymax] = d.bbox.to_array();
        *out = TfDetection {
            bbox: TfBox { xmin, ymin, xmax, ymax },
            class_id: d.class_id,
            score: d.score,
            tile_id: d.tile_id.map_or(-1, i64::from),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tf_detections_to_jsonl(set: *const TfDetections, out: *mut *mut c_char) -> TfStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        *out = to_c_string(write_detections_jsonl(&(*set).0))?;
        Ok(())
    })
}

/// Moves a tile-local set into image coordinates. Detections clipped to
/// nothing are dropped; their count goes to `dropped` when it is not null.
#[no_mangle]
pub unsafe extern "C" fn tf_detections_remap(
    set: *const TfDetections,
    plan: *const TfPlan,
    out: *mut *mut TfDetections,
    dropped: *mut usize,
) -> TfStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(plan, "plan")?;
        non_null(out, "out")?;
        let r = remap_set(&(*set).0, &(*plan).0)?;
        if !dropped.is_null() {
            *dropped = r.dropped;
        }
        *out = Box::into_raw(Box::new(TfDetections(r.set)));
        Ok(())
    })
}

/// Fuses `count` global sets. `config_json` is a fusion configuration object
/// or null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn tf_detections_fuse(
    sets: *const *const TfDetections,
    count: usize,
    config_json: *const c_char,
    out: *mut *mut TfDetections,
) -> TfStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg: FusionConfig = if config_json.is_null() {
            FusionConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        let mut owned = Vec::with_capacity(count);
        if count > 0 {
            non_null(sets, "sets")?;
            for &p in std::slice::from_raw_parts(sets, count) {
                non_null(p, "sets[i]")?;
                owned.push((*p).0.clone());
            }
        }
        let fused = ensemble_fuse(&owned, &cfg)?;
        *out = Box::into_raw(Box::new(TfDetections(fused)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tf_detections_free(set: *mut TfDetections) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Evaluates a global set against ground-truth JSONL and writes the report
/// as JSON. `iou_threshold <= 0` selects 0.5.
#[no_mangle]
pub unsafe extern "C" fn tf_evaluate(
    set: *const TfDetections,
    ground_truth_jsonl: *const c_char,
    iou_threshold: f64,
    out: *mut *mut c_char,
) -> TfStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        let gt_text = str_arg(ground_truth_jsonl, "ground_truth_jsonl")?;
        let gts = parse_ground_truth(gt_text.as_bytes(), GtFormat::Jsonl, 0, 0)?;
        let mut cfg = EvalConfig::default();
        if iou_threshold > 0.0 {
            cfg.iou_threshold = iou_threshold;
        }
        let report = build_report(&(*set).0, &gts, &cfg, &Default::default())?;
        *out = to_c_string(report.to_json())?;
        Ok(())
    })
}
