//! C ABI over the co-training engine.
//!
//! Every function returns a [`CotrainStatus`]. On failure a message is stored per thread
//! and can be read with [`cotrain_last_error`]. Objects cross the boundary as opaque
//! handles that must be released with the matching `*_free` function; strings returned
//! by the library are released with [`cotrain_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cotrain_core::config::CoTrainConfig;
use cotrain_core::cotrain::{self, RunOptions};
use cotrain_core::eval::{self, EvalProtocol, GroundTruthMap};
use cotrain_core::experiment::SimSetup;
use cotrain_core::labels::PseudoLabelSet;
use cotrain_core::simdet::{SimParams, WorldConfig};
use cotrain_core::types::{BoundingBox, DetectionRecord, ImageId};
use cotrain_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CotrainStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or a record that fails validation.
    InvalidInput = 3,
    Config = 4,
    Backend = 5,
    Io = 6,
    Checkpoint = 7,
    NotFound = 8,
    Panic = 9,
}

/// Pseudo-label set.
pub struct CotrainLabels(PseudoLabelSet);

/// Evaluation report.
pub struct CotrainReport(eval::EvalReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CotrainStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CotrainStatus::Io,
            Error::Parse { .. } | Error::Validation { .. } => CotrainStatus::InvalidInput,
            Error::Config(_) | Error::UnknownCategory(_) => CotrainStatus::Config,
            Error::Backend { .. } | Error::Protocol(_) => CotrainStatus::Backend,
            Error::Checkpoint { .. } => CotrainStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(CotrainStatus::InvalidInput, format!("invalid JSON: {e}"))
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CotrainStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CotrainStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CotrainStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CotrainStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CotrainStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn parse<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, what: &str) -> Result<T, Failure> {
    match text {
        Some(s) => serde_json::from_str(s)
            .map_err(|e| Failure(CotrainStatus::InvalidInput, format!("invalid `{what}`: {e}"))),
        None => Ok(T::default()),
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("JSON has no interior nul").into_raw()
}

fn parse_box(v: &[f64; 4]) -> Result<BoundingBox, Failure> {
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(Failure::from)
}

/// Message of the last failed call on this thread, or null. Owned by the library and
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cotrain_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cotrain_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Intersection over union of two `[x1, y1, x2, y2]` boxes.
///
/// # Safety
/// `a` and `b` must point to four doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_iou(a: *const [f64; 4], b: *const [f64; 4], out: *mut f64) -> CotrainStatus {
    guard(|| {
        let a = parse_box(ref_arg(a, "a")?)?;
        let b = parse_box(ref_arg(b, "b")?)?;
        *out_arg(out, "out")? = eval::iou(&a, &b);
        Ok(())
    })
}

/// Parses a pseudo-label set from JSON. Accepts a full set or a plain
/// `{image_id: [detections]}` map, which becomes a view-1 set of cycle 0.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_labels_from_json(json: *const c_char, out: *mut *mut CotrainLabels) -> CotrainStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let value: serde_json::Value = serde_json::from_str(text)?;
        let set = if value.get("entries").is_some() {
            serde_json::from_value(value)?
        } else {
            let entries: BTreeMap<ImageId, Vec<DetectionRecord>> = serde_json::from_value(value)?;
            PseudoLabelSet { producing_view: cotrain_core::types::View::One, cycle: 0, entries }
        };
        for (id, dets) in &set.entries {
            for d in dets {
                d.bbox.validate().map_err(|e| Failure(CotrainStatus::InvalidInput, format!("{id}: {e}")))?;
            }
        }
        *out = Box::into_raw(Box::new(CotrainLabels(set)));
        Ok(())
    })
}

/// Serializes a set to JSON. Free the result with [`cotrain_string_free`].
///
/// # Safety
/// `labels` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_labels_to_json(labels: *const CotrainLabels, out: *mut *mut c_char) -> CotrainStatus {
    guard(|| {
        let l = ref_arg(labels, "labels")?;
        *out_arg(out, "out")? = into_c_string(serde_json::to_string(&l.0)?);
        Ok(())
    })
}

/// Number of images and boxes in a set.
///
/// # Safety
/// `labels` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_labels_counts(
    labels: *const CotrainLabels,
    num_images: *mut usize,
    num_boxes: *mut usize,
) -> CotrainStatus {
    guard(|| {
        let l = ref_arg(labels, "labels")?;
        *out_arg(num_images, "num_images")? = l.0.len();
        *out_arg(num_boxes, "num_boxes")? = l.0.num_boxes();
        Ok(())
    })
}

/// # Safety
/// `labels` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cotrain_labels_free(labels: *mut CotrainLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// Accumulates `newer` into `old`: images present in `newer` take its labels.
///
/// # Safety
/// Both inputs must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_fuse(
    old: *const CotrainLabels,
    newer: *const CotrainLabels,
    out: *mut *mut CotrainLabels,
) -> CotrainStatus {
    guard(|| {
        let fused = cotrain::fuse(&ref_arg(old, "old")?.0, &ref_arg(newer, "newer")?.0)?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(CotrainLabels(fused)));
        Ok(())
    })
}

/// Evaluates detections against ground truth given as `{image_id: [{category, bbox}]}`.
/// Ground-truth boxes shorter than `min_height` are ignored.
///
/// # Safety
/// `dets` must be a live handle, `gt_json` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_evaluate(
    dets: *const CotrainLabels,
    gt_json: *const c_char,
    min_height: f64,
    out: *mut *mut CotrainReport,
) -> CotrainStatus {
    guard(|| {
        let d = ref_arg(dets, "dets")?;
        let gt: GroundTruthMap = serde_json::from_str(str_arg(gt_json, "gt_json")?)?;
        let out = out_arg(out, "out")?;
        let protocol = EvalProtocol::kitti(min_height);
        protocol.validate()?;
        *out = Box::into_raw(Box::new(CotrainReport(eval::evaluate(&d.0.entries, &gt, &protocol))));
        Ok(())
    })
}

/// Mean AP in percent.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_report_map(report: *const CotrainReport, out: *mut f64) -> CotrainStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(report, "report")?.0.map;
        Ok(())
    })
}

/// AP of one category in percent; `NotFound` if the category was not evaluated.
///
/// # Safety
/// `report` must be a live handle, `category` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_report_ap(
    report: *const CotrainReport,
    category: *const c_char,
    out: *mut f64,
) -> CotrainStatus {
    guard(|| {
        let r = ref_arg(report, "report")?;
        let c = str_arg(category, "category")?;
        let cat = r
            .0
            .categories
            .iter()
            .find(|(k, _)| k.as_str() == c)
            .ok_or_else(|| Failure(CotrainStatus::NotFound, format!("category `{c}` not in report")))?;
        *out_arg(out, "out")? = cat.1.ap;
        Ok(())
    })
}

/// Full report as JSON. Free the result with [`cotrain_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_report_to_json(report: *const CotrainReport, out: *mut *mut c_char) -> CotrainStatus {
    guard(|| {
        let r = ref_arg(report, "report")?;
        *out_arg(out, "out")? = into_c_string(r.0.to_json());
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cotrain_report_free(report: *mut CotrainReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Runs co-training on a simulated world with `labeled_percent` of images labeled and
/// returns the final pseudo-labels. JSON arguments may be null for defaults. With a
/// `run_dir`, checkpoints are written there and an interrupted run resumes.
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cotrain_run_simulated(
    world_json: *const c_char,
    simulator_json: *const c_char,
    config_json: *const c_char,
    labeled_percent: f64,
    run_dir: *const c_char,
    out: *mut *mut CotrainLabels,
) -> CotrainStatus {
    guard(|| {
        let world: WorldConfig = parse(opt_str_arg(world_json, "world_json")?, "world_json")?;
        let params: SimParams = parse(opt_str_arg(simulator_json, "simulator_json")?, "simulator_json")?;
        let mut cfg: CoTrainConfig = parse(opt_str_arg(config_json, "config_json")?, "config_json")?;
        let run_dir = opt_str_arg(run_dir, "run_dir")?.map(PathBuf::from);
        let out = out_arg(out, "out")?;
        cfg.view2_transform = world.view2_transform;
        let setup = SimSetup::new(&world, &params, labeled_percent)?;
        let opts = RunOptions { resume: run_dir.is_some(), run_dir, ..RunOptions::default() };
        let outcome = cotrain::run(&setup.backend, &setup.split, &cfg, &opts)?;
        *out = Box::into_raw(Box::new(CotrainLabels(outcome.pseudo_labels)));
        Ok(())
    })
}
