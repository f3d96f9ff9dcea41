//! C ABI over the houndkit inference path.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns an
//! [`HkStatus`]; on failure the message is kept per thread and can be read
//! with [`hk_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use houndkit::cnn::{load_model, Model, Tensor};
use houndkit::locator::{classify_track, screen, ScreenConfig};
use houndkit::trace::{read_trace, standardize_f32_into, Trace};
use houndkit::Error;

/// Result codes; 1 to 6 mean what the same CLI exit codes mean.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkStatus {
    Ok = 0,
    Generic = 1,
    InvalidArgument = 2,
    Format = 3,
    HashMismatch = 4,
    MissingFile = 5,
    Config = 6,
    NullPointer = 7,
    Panic = 8,
}

pub struct HkModel {
    model: Model,
    /// Average CP length recorded at training time, 0 when absent.
    mean_cp_len: f64,
}

pub struct HkTrace(Trace);

pub struct HkLocations(Vec<usize>);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| {
        let mut bytes = msg.into_bytes();
        bytes.retain(|&b| b != 0);
        *e.borrow_mut() = bytes;
    });
}

fn status_of(e: &Error) -> HkStatus {
    match e {
        Error::Argument(_) | Error::Bounds { .. } => HkStatus::InvalidArgument,
        Error::FormatVersion { .. } | Error::Malformed { .. } | Error::Json(_) | Error::Shape { .. } => {
            HkStatus::Format
        }
        Error::HashMismatch { .. } => HkStatus::HashMismatch,
        Error::MissingFile(_) => HkStatus::MissingFile,
        Error::Config(_) => HkStatus::Config,
        Error::Io(_) => HkStatus::Generic,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, recording the error message and mapping panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HkStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HkStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HkStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`) and returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hk_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an `mdl-v1` model from its base name.
///
/// # Safety
/// `base` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hk_model_load(base: *const c_char, out: *mut *mut HkModel) -> HkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (model, prov) = load_model(&path_arg(base, "base")?)?;
        let mean_cp_len = prov.and_then(|p| p.mean_cp_len).unwrap_or(0.0);
        *out = Box::into_raw(Box::new(HkModel { model, mean_cp_len }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`hk_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hk_model_free(model: *mut HkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length N the model classifies, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_model_window_len(model: *const HkModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.input_len)
}

/// Average CP length recorded with the model, 0 if none.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_model_mean_cp_len(model: *const HkModel) -> f64 {
    model.as_ref().map_or(0.0, |m| m.mean_cp_len)
}

/// Classifies one raw window of `len` samples (standardized internally);
/// writes the class (0 start, 1 spare, 2 noise) and, if `probs` is not null,
/// the three class probabilities.
///
/// # Safety
/// `window` must point to `len` floats; `class_out` must be writable; `probs`
/// must be null or point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hk_classify_window(
    model: *const HkModel,
    window: *const f32,
    len: usize,
    class_out: *mut u8,
    probs: *mut f64,
) -> HkStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let class_out = out_ptr(class_out, "class_out")?;
        if window.is_null() {
            return Err(Fail::Null("window"));
        }
        let n = m.model.config.input_len;
        if len != n {
            return Err(Error::Argument(format!("window has {len} samples, model expects {n}")).into());
        }
        let mut x = vec![0.0; n];
        standardize_f32_into(std::slice::from_raw_parts(window, len), &mut x)?;
        let (classes, p) = m.model.predict_batch(&Tensor::new(vec![1, 1, n], x)?)?;
        *class_out = classes[0] as u8;
        if !probs.is_null() {
            ptr::copy_nonoverlapping(p.data().as_ptr(), probs, 3);
        }
        Ok(())
    })
}

/// Loads a `trc-v1` trace from its base name.
///
/// # Safety
/// `base` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hk_trace_load(base: *const c_char, out: *mut *mut HkTrace) -> HkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (trace, _) = read_trace(&path_arg(base, "base")?)?;
        *out = Box::into_raw(Box::new(HkTrace(trace)));
        Ok(())
    })
}

/// Copies `len` samples into a new trace.
///
/// # Safety
/// `samples` must point to `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hk_trace_from_samples(
    samples: *const f32,
    len: usize,
    sample_rate_hz: f64,
    out: *mut *mut HkTrace,
) -> HkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if samples.is_null() {
            return Err(Fail::Null("samples"));
        }
        let data = std::slice::from_raw_parts(samples, len).to_vec();
        *out = Box::into_raw(Box::new(HkTrace(Trace::new("ffi", data, sample_rate_hz)?)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_trace_len(trace: *const HkTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hk_trace_free(trace: *mut HkTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Sliding-window classification at `stride` followed by screening with
/// initial kernel `k0` (odd). `avg_cp <= 0` uses the length recorded with
/// the model.
///
/// # Safety
/// `model` and `trace` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hk_locate(
    model: *const HkModel,
    trace: *const HkTrace,
    stride: usize,
    k0: usize,
    avg_cp: f64,
    out: *mut *mut HkLocations,
) -> HkStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let t = obj(trace, "trace")?;
        let out = out_ptr(out, "out")?;
        let avg = if avg_cp > 0.0 { avg_cp } else { m.mean_cp_len };
        let n = m.model.config.input_len;
        let cfg = ScreenConfig::new(k0, avg, stride)?.with_min_cp_floor((n as f64).min(avg))?;
        let track = classify_track(&m.model, &t.0, n, stride)?;
        let loc = screen(&track.classes, &cfg)?;
        *out = Box::into_raw(Box::new(HkLocations(loc.starts)));
        Ok(())
    })
}

/// Number of located starts, 0 for a null handle.
///
/// # Safety
/// `locs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hk_locations_len(locs: *const HkLocations) -> usize {
    locs.as_ref().map_or(0, |l| l.0.len())
}

/// Copies up to `cap` starts (sample indices) into `buf`; returns how many
/// were copied.
///
/// # Safety
/// `locs` must be null or a live handle; `buf` must be null or point to `cap`
/// writable elements.
#[no_mangle]
pub unsafe extern "C" fn hk_locations_copy(locs: *const HkLocations, buf: *mut usize, cap: usize) -> usize {
    match (locs.as_ref(), buf.is_null()) {
        (Some(l), false) => {
            let n = l.0.len().min(cap);
            ptr::copy_nonoverlapping(l.0.as_ptr(), buf, n);
            n
        }
        _ => 0,
    }
}

/// # Safety
/// `locs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hk_locations_free(locs: *mut HkLocations) {
    if !locs.is_null() {
        drop(Box::from_raw(locs));
    }
}

/// IoU of two equal-length intervals starting at `pred` and `gt`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hk_iou(pred: usize, gt: usize, len: usize, out: *mut f64) -> HkStatus {
    guard(|| {
        *out_ptr(out, "out")? = houndkit::eval::iou(pred, gt, len)?;
        Ok(())
    })
}
