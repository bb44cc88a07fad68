//! C ABI over trained macas checkpoints.
//!
//! Every fallible function returns a [`MacasStatus`]; on failure the
//! calling thread's last error message is set and can be read with
//! [`macas_last_error_message`]. Models are opaque handles owned by the
//! caller and released with [`macas_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use macas::pipeline::{weighted_f1, Checkpoint};
use macas::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A loaded checkpoint.
pub struct MacasModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MacasStatus, msg: impl Into<String>) -> MacasStatus {
    set_error(msg);
    status
}

fn from_core(e: Error) -> MacasStatus {
    let status = match e {
        Error::Io { .. } => MacasStatus::Io,
        Error::CorruptCheckpoint { .. } | Error::CheckpointVersion { .. } => MacasStatus::Checkpoint,
        Error::Config(_) | Error::Input(_) | Error::Parse { .. } | Error::Shape { .. } => MacasStatus::InvalidArgument,
        _ => MacasStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MacasStatus) -> MacasStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        fail(MacasStatus::Internal, format!("internal panic: {msg}"))
    })
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, MacasStatus> {
    if s.is_null() {
        return Err(fail(MacasStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(MacasStatus::InvalidUtf8, format!("{what} is not UTF-8: {e}")))
}

unsafe fn model_ref<'a>(model: *const MacasModel) -> Result<&'a MacasModel, MacasStatus> {
    model
        .as_ref()
        .ok_or_else(|| fail(MacasStatus::NullPointer, "model handle is null"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn macas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn macas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint file into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn macas_model_load(path: *const c_char, out: *mut *mut MacasModel) -> MacasStatus {
    guard(|| {
        if out.is_null() {
            return fail(MacasStatus::NullPointer, "output handle pointer is null");
        }
        *out = ptr::null_mut();
        let path = tri!(read_str(path, "path"));
        match Checkpoint::load(Path::new(path)) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(MacasModel { checkpoint }));
                MacasStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`macas_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn macas_model_free(model: *mut MacasModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn macas_model_num_classes(model: *const MacasModel, out: *mut usize) -> MacasStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        if out.is_null() {
            return fail(MacasStatus::NullPointer, "output pointer is null");
        }
        *out = m.checkpoint.labels.len();
        MacasStatus::Ok
    })
}

/// Copies the name of class `index` into `buf` as a NUL-terminated
/// string. `*needed`, when non-NULL, receives the size including the
/// terminator; a short buffer yields `BUFFER_TOO_SMALL`.
///
/// # Safety
/// `buf` must hold `buf_len` bytes (or be NULL with `buf_len` 0).
#[no_mangle]
pub unsafe extern "C" fn macas_model_class_name(
    model: *const MacasModel,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> MacasStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        let labels = &m.checkpoint.labels;
        let Some(name) = labels.get(index) else {
            return fail(
                MacasStatus::InvalidArgument,
                format!("class index {index} outside {} classes", labels.len()),
            );
        };
        let size = name.len() + 1;
        if !needed.is_null() {
            *needed = size;
        }
        if buf_len < size {
            return fail(MacasStatus::BufferTooSmall, format!("class name needs {size} bytes, got {buf_len}"));
        }
        if buf.is_null() {
            return fail(MacasStatus::NullPointer, "buffer is null");
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        MacasStatus::Ok
    })
}

/// Class distribution for `text`, written to `probs[0..num_classes]`;
/// the argmax goes to `*predicted` when non-NULL.
///
/// # Safety
/// `text` must be NUL-terminated and `probs` hold `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn macas_model_predict(
    model: *const MacasModel,
    text: *const c_char,
    probs: *mut f64,
    probs_len: usize,
    predicted: *mut usize,
) -> MacasStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        let text = tri!(read_str(text, "text"));
        let k = m.checkpoint.labels.len();
        if probs_len < k {
            return fail(MacasStatus::BufferTooSmall, format!("{k} classes, buffer holds {probs_len}"));
        }
        if probs.is_null() {
            return fail(MacasStatus::NullPointer, "probability buffer is null");
        }
        let z = match m.checkpoint.predict(text) {
            Ok(z) => z,
            Err(e) => return from_core(e),
        };
        ptr::copy_nonoverlapping(z.data().as_ptr(), probs, k);
        if !predicted.is_null() {
            *predicted = z.argmax_rows()[0];
        }
        MacasStatus::Ok
    })
}

/// Support-weighted F1 of `n` predictions over `num_classes` classes.
///
/// # Safety
/// `y_true` and `y_pred` must each hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn macas_weighted_f1(
    y_true: *const usize,
    y_pred: *const usize,
    n: usize,
    num_classes: usize,
    out: *mut f64,
) -> MacasStatus {
    guard(|| {
        if y_true.is_null() || y_pred.is_null() || out.is_null() {
            return fail(MacasStatus::NullPointer, "label arrays and output must be non-null");
        }
        let t = std::slice::from_raw_parts(y_true, n);
        let p = std::slice::from_raw_parts(y_pred, n);
        match weighted_f1(t, p, num_classes) {
            Ok(f) => {
                *out = f;
                MacasStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
