//! C ABI over the `lcdl` engine.
//!
//! Models are opaque `LcdlModel*` handles created by `lcdl_model_build_proposed`
//! or `lcdl_model_load` and released with `lcdl_model_free`. Every fallible
//! call returns an [`LcdlStatus`]; on failure `lcdl_last_error` yields a
//! message for the calling thread. A handle may be read from several threads
//! at once (`predict`, `save`, queries) but must not be freed concurrently.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lcdl::layers::Mode;
use lcdl::metrics::score;
use lcdl::model::{build_proposed_model, load_checkpoint, save_checkpoint, SequentialModel};
use lcdl::{Error, Tensor};

/// Status codes. Values 1-5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcdlStatus {
    Ok = 0,
    Verification = 1,
    Config = 2,
    Data = 3,
    Divergence = 4,
    Checkpoint = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct LcdlModel {
    inner: SequentialModel<f32>,
}

/// Macro-averaged classification metrics and label RMSE.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LcdlMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rmse: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LcdlStatus {
    match err.exit_code() {
        1 => LcdlStatus::Verification,
        2 => LcdlStatus::Config,
        4 => LcdlStatus::Divergence,
        5 => LcdlStatus::Checkpoint,
        _ => LcdlStatus::Data,
    }
}

enum Failure {
    Engine(Error),
    Null(&'static str),
    TooSmall(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus a thread-local
/// message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LcdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcdlStatus::Ok,
        Ok(Err(Failure::Engine(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            LcdlStatus::NullPointer
        }
        Ok(Err(Failure::TooSmall(msg))) => {
            set_last_error(msg);
            LcdlStatus::BufferTooSmall
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LcdlStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure::Engine(Error::Config(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_handle(mut model: SequentialModel<f32>, out: *mut *mut LcdlModel) {
    model.set_mode(Mode::Eval);
    let handle = Box::into_raw(Box::new(LcdlModel { inner: model }));
    // SAFETY: callers check `out` for null before building the model.
    unsafe { *out = handle };
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lcdl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lcdl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the 16-layer classifier for `channels x height x width` input.
/// Height and width must be multiples of 32.
#[no_mangle]
pub unsafe extern "C" fn lcdl_model_build_proposed(
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    dropout: f64,
    seed: u64,
    out: *mut *mut LcdlModel,
) -> LcdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = build_proposed_model::<f32>((channels, height, width), num_classes, dropout, seed)?;
        into_handle(model, out);
        Ok(())
    })
}

/// Loads a checkpoint file into a new handle.
#[no_mangle]
pub unsafe extern "C" fn lcdl_model_load(path: *const c_char, out: *mut *mut LcdlModel) -> LcdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = path_arg(path, "path")?;
        into_handle(load_checkpoint::<f32>(path)?, out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lcdl_model_save(model: *const LcdlModel, path: *const c_char) -> LcdlStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let path = path_arg(path, "path")?;
        save_checkpoint(&model.inner, path)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lcdl_model_free(model: *mut LcdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lcdl_model_input_shape(
    model: *const LcdlModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> LcdlStatus {
    guard(|| {
        let cfg = non_null(model, "model")?.inner.config();
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(Failure::Null("shape output"));
        }
        *channels = cfg.input_channels;
        *height = cfg.input_height;
        *width = cfg.input_width;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lcdl_model_num_classes(model: *const LcdlModel, out: *mut usize) -> LcdlStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = m.inner.num_classes();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lcdl_model_param_count(model: *const LcdlModel, out: *mut usize) -> LcdlStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = m.inner.param_count();
        Ok(())
    })
}

/// Eval-mode class probabilities for `n` images laid out as `[n, C, H, W]`
/// row-major floats in `[0, 1]`. Writes `n * K` probabilities to `probs`
/// and, when `classes` is non-null, `n` argmax indices.
#[no_mangle]
pub unsafe extern "C" fn lcdl_model_predict(
    model: *const LcdlModel,
    images: *const f32,
    n: usize,
    probs: *mut f32,
    probs_len: usize,
    classes: *mut usize,
) -> LcdlStatus {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        let cfg = m.config();
        let per = cfg.input_channels * cfg.input_height * cfg.input_width;
        if n == 0 {
            return Err(Error::Validation("n must be >= 1".into()).into());
        }
        let k = m.num_classes();
        if probs.is_null() {
            return Err(Failure::Null("probs"));
        }
        let (Some(need), Some(count)) = (n.checked_mul(k), n.checked_mul(per)) else {
            return Err(Error::Validation(format!("n = {n} overflows the buffer size")).into());
        };
        if probs_len < need {
            return Err(Failure::TooSmall(format!("probs holds {probs_len} floats, need {need}")));
        }
        let data = slice(images, count, "images")?.to_vec();
        let x = Tensor::from_vec(vec![n, cfg.input_channels, cfg.input_height, cfg.input_width], data)?;
        let pred = m.predict(&x)?;
        std::slice::from_raw_parts_mut(probs, need).copy_from_slice(pred.probs.data());
        if !classes.is_null() {
            std::slice::from_raw_parts_mut(classes, n).copy_from_slice(&pred.class_index);
        }
        Ok(())
    })
}

/// Accuracy, macro precision/recall/F1 and label RMSE for `n` label pairs
/// over `k` classes.
#[no_mangle]
pub unsafe extern "C" fn lcdl_metrics(
    true_labels: *const u32,
    pred_labels: *const u32,
    n: usize,
    k: usize,
    out: *mut LcdlMetrics,
) -> LcdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let t: Vec<usize> = slice(true_labels, n, "true_labels")?.iter().map(|&v| v as usize).collect();
        let p: Vec<usize> = slice(pred_labels, n, "pred_labels")?.iter().map(|&v| v as usize).collect();
        let m = score(&t, &p, k)?;
        *out = LcdlMetrics {
            accuracy: m.accuracy,
            precision: m.precision_macro,
            recall: m.recall_macro,
            f1: m.f1_macro,
            rmse: m.rmse.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Runs the finite-difference gradient suite. Writes the worst relative
/// error to `max_rel_error` (if non-null); returns
/// `LCDL_STATUS_VERIFICATION` when any check exceeds tolerance.
#[no_mangle]
pub unsafe extern "C" fn lcdl_gradcheck(max_rel_error: *mut f64) -> LcdlStatus {
    guard(|| {
        let reports = lcdl::gradcheck::run_suite(&Default::default())?;
        if !max_rel_error.is_null() {
            *max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        }
        lcdl::gradcheck::verify_reports(&reports)?;
        Ok(())
    })
}
