//! C ABI over the `irp` predictor.
//!
//! A model is loaded once into an opaque `IrpModel` handle and scored with
//! JSON records in the same schema the HTTP service accepts. Every fallible
//! call returns an `IrpStatus`; on failure `irp_last_error()` describes the
//! most recent error on the calling thread.
//!
//! The handle is immutable after loading, so one handle may be shared by
//! several threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use irp::checkpoint;
use irp::service::{predict_body, ServiceState};
use irp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidRequest = 5,
    Internal = 6,
    Panic = 7,
}

/// Loaded model. Opaque to C.
pub struct IrpModel {
    state: ServiceState,
    version: CString,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrpPrediction {
    /// P(image-seeking intent) in (0, 1).
    pub probability: f64,
    /// 1 iff `probability >= threshold`.
    pub decision: u8,
    pub threshold: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IrpStatus {
    match e {
        Error::Io(_) => IrpStatus::Io,
        Error::Checkpoint(_) => IrpStatus::Checkpoint,
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::SequenceTooLong { .. }
        | Error::Json(_) => IrpStatus::InvalidRequest,
        _ => IrpStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (IrpStatus, String)>) -> IrpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IrpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside irp".to_string());
            IrpStatus::Panic
        }
    }
}

fn fail(e: Error) -> (IrpStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (IrpStatus, String)> {
    if p.is_null() {
        return Err((IrpStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (IrpStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// Loads a checkpoint. `vocab_path` may be NULL to use the vocabulary path
/// recorded in the checkpoint. On success `*out` owns a new handle that
/// must be released with `irp_model_free`.
///
/// # Safety
/// `ckpt_path` must be a NUL-terminated string, `vocab_path` NULL or a
/// NUL-terminated string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irp_model_load(
    ckpt_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut IrpModel,
) -> IrpStatus {
    guard(|| {
        if out.is_null() {
            return Err((IrpStatus::NullPointer, "out is NULL".to_string()));
        }
        *out = ptr::null_mut();
        let ckpt = str_arg(ckpt_path, "ckpt_path")?;
        let vocab = if vocab_path.is_null() {
            None
        } else {
            Some(Path::new(str_arg(vocab_path, "vocab_path")?))
        };
        let m = checkpoint::load_model(Path::new(ckpt), vocab).map_err(fail)?;
        let version = CString::new(m.model_version.clone()).expect("hex digest has no NUL");
        let model = IrpModel {
            state: ServiceState {
                predictor: m.predictor,
                model_version: m.model_version,
            },
            version,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from `irp_model_load` that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn irp_model_free(model: *mut IrpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores one JSON record (`{"query": {...}, "products": [...]}`; any
/// `label` is ignored) at the model's calibrated threshold.
///
/// # Safety
/// `model` must be a live handle, `json` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irp_model_predict_json(
    model: *const IrpModel,
    json: *const c_char,
    out: *mut IrpPrediction,
) -> IrpStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err((IrpStatus::NullPointer, "model or out is NULL".to_string()));
        }
        let body = str_arg(json, "json")?;
        let r = predict_body(&(*model).state, body.as_bytes()).map_err(fail)?;
        *out = IrpPrediction {
            probability: r.probability,
            decision: r.decision,
            threshold: r.threshold,
        };
        Ok(())
    })
}

/// The calibrated decision threshold, or NaN for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irp_model_threshold(model: *const IrpModel) -> f64 {
    if model.is_null() {
        return f64::NAN;
    }
    (*model).state.predictor.threshold
}

/// Identifier derived from the checkpoint bytes. Owned by the handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irp_model_version(model: *const IrpModel) -> *const c_char {
    if model.is_null() {
        return ptr::null();
    }
    (*model).version.as_ptr()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn irp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn irp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
