//! C ABI over the `speedloss` library.
//!
//! Every function returns an [`SlStatus`]; outputs go through pointer
//! arguments. On a non-`Ok` status, [`sl_last_error`] describes the failure
//! on the calling thread. Objects are opaque handles released by their
//! matching `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use speedloss::changepoint::{pelt_detect, Segmentation};
use speedloss::density::{sensor_verdict, BimodalityConfig};
use speedloss::losses::{BatchShape, LossSpec, PredBatch};
use speedloss::metrics::{var_at, ErrorDistribution, Scope};
use speedloss::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NoValidTargets = 4,
    Degenerate = 5,
    Utf8 = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque loss configuration.
pub struct SlLossSpec(LossSpec);

/// Opaque change-point result.
pub struct SlSegmentation(Segmentation);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::ShapeMismatch(_) | Error::BatchTooLarge { .. } => SlStatus::ShapeMismatch,
        Error::NoValidTargets | Error::EmptySelection => SlStatus::NoValidTargets,
        Error::ZeroScale | Error::ZeroBandwidth | Error::DegenerateNormalization => SlStatus::Degenerate,
        Error::InvalidParameter(_) | Error::Config(_) | Error::Json(_) | Error::TooFewSamples { .. } => {
            SlStatus::InvalidArgument
        }
        _ => SlStatus::Internal,
    }
}

struct Fail(SlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure, and converts panics into `SlStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SlStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(SlStatus::Utf8, format!("{what}: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Fail(SlStatus::Internal, e.to_string()))
}

/// Message of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a loss spec from JSON, e.g. `{"kind":"Huber","beta":1.0}`.
/// Missing hyperparameters take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_loss_spec_from_json(json: *const c_char, out: *mut *mut SlLossSpec) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = string(json, "json")?;
        let spec: LossSpec = serde_json::from_str(text).map_err(Error::from)?;
        spec.validate()?;
        *out = Box::into_raw(Box::new(SlLossSpec(spec.resolved())));
        Ok(())
    })
}

/// # Safety
/// `spec` must come from [`sl_loss_spec_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sl_loss_spec_free(spec: *mut SlLossSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Evaluates a loss on a `batch x locations x horizon` block stored
/// row-major. `mask` may be null (all entries valid); otherwise nonzero marks
/// a valid entry. `grad` may be null; otherwise it receives
/// d(value)/d(pred) with the same layout.
///
/// # Safety
/// Arrays must hold `batch * locations * horizon` elements; `value` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sl_loss_evaluate(
    spec: *const SlLossSpec,
    pred: *const f64,
    target: *const f64,
    mask: *const u8,
    batch: usize,
    locations: usize,
    horizon: usize,
    value: *mut f64,
    grad: *mut f64,
) -> SlStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        if value.is_null() {
            return Err(null("value"));
        }
        let n = batch
            .checked_mul(locations)
            .and_then(|x| x.checked_mul(horizon))
            .ok_or_else(|| Fail(SlStatus::InvalidArgument, "batch size overflows".into()))?;
        let shape = BatchShape::new(batch, locations, horizon);
        let p = slice(pred, n, "pred")?.to_vec();
        let t = slice(target, n, "target")?.to_vec();
        let m = if mask.is_null() {
            vec![true; n]
        } else {
            slice(mask, n, "mask")?.iter().map(|&b| b != 0).collect()
        };
        let out = spec.0.evaluate(&PredBatch::new(shape, p, t, m)?)?;
        *value = out.value;
        if !grad.is_null() && n > 0 {
            std::slice::from_raw_parts_mut(grad, n).copy_from_slice(&out.grad);
        }
        Ok(())
    })
}

/// Smallest error e with P(error >= e) <= 1 - alpha over `errors`.
///
/// # Safety
/// `errors` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_var_at(errors: *const f64, n: usize, alpha: f64, out: *mut f64) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let errors = slice(errors, n, "errors")?.to_vec();
        let dist = ErrorDistribution {
            scope: Scope::Overall,
            targets: vec![f64::NAN; errors.len()],
            errors,
        };
        *out = var_at(&dist, alpha)?;
        Ok(())
    })
}

/// Penalized kernel change-point detection on one series.
///
/// # Safety
/// `series` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_pelt_detect(
    series: *const f64,
    n: usize,
    penalty: f64,
    out: *mut *mut SlSegmentation,
) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let seg = pelt_detect(slice(series, n, "series")?, penalty)?;
        *out = Box::into_raw(Box::new(SlSegmentation(seg)));
        Ok(())
    })
}

/// Number of change points in `seg`; 0 for null.
///
/// # Safety
/// `seg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sl_segmentation_len(seg: *const SlSegmentation) -> usize {
    seg.as_ref().map_or(0, |s| s.0.indices.len())
}

/// Change-point indices, ascending; valid while `seg` lives.
///
/// # Safety
/// `seg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sl_segmentation_indices(seg: *const SlSegmentation) -> *const usize {
    seg.as_ref().map_or(ptr::null(), |s| s.0.indices.as_ptr())
}

/// Penalized objective of the optimal segmentation; NaN for null.
///
/// # Safety
/// `seg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sl_segmentation_objective(seg: *const SlSegmentation) -> f64 {
    seg.as_ref().map_or(f64::NAN, |s| s.0.objective)
}

/// # Safety
/// `seg` must come from [`sl_pelt_detect`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sl_segmentation_free(seg: *mut SlSegmentation) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Bimodality verdict for one sensor's observed speeds, as a JSON object.
/// `config_json` may be null for defaults. Free the result with
/// [`sl_string_free`].
///
/// # Safety
/// `samples` must hold `n` elements; `config_json` must be NUL-terminated or
/// null; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_bimodality_json(
    samples: *const f64,
    n: usize,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: BimodalityConfig = if config_json.is_null() {
            BimodalityConfig::default()
        } else {
            serde_json::from_str(string(config_json, "config_json")?).map_err(Error::from)?
        };
        config.validate()?;
        let verdict = sensor_verdict("sensor", slice(samples, n, "samples")?, &config);
        *out = into_c_string(serde_json::to_string(&verdict).map_err(Error::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
