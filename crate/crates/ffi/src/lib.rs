//! C ABI over the matting stack: metrics, the improvement aggregate and checkpoint inference.
//!
//! Every entry point returns a [`PmStatus`]. On failure a description is kept per thread
//! and can be fetched with [`pm_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use promptmatte::checkpoint::Checkpoint;
use promptmatte::metrics::{impro, MetricConfig, MetricRow};
use promptmatte::model::Sample;
use promptmatte::prompt::{point_pad, OpacityLabel, PromptFile};
use promptmatte::{Error, Tensor};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Format = 5,
    Runtime = 6,
    Panic = 7,
}

/// The five matting errors of one prediction.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PmMetrics {
    pub mse: f64,
    pub mad: f64,
    pub sad: f64,
    pub grad: f64,
    pub conn: f64,
}

/// Opaque loaded checkpoint.
pub struct PmModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PmStatus {
    match e {
        Error::Argument(_) | Error::Capacity(_) => PmStatus::InvalidArgument,
        Error::Dimension(_) => PmStatus::Dimension,
        Error::Io(_) => PmStatus::Io,
        Error::Format(_) | Error::Json(_) | Error::Image(_) => PmStatus::Format,
        _ => PmStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PmStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            PmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("internal panic: {}", msg.unwrap_or_default()));
            PmStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() { Err(Failure::Null(what)) } else { Ok(p) }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(nonnull(p, what)?, len))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    CStr::from_ptr(nonnull(p, what)?)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Argument(format!("{what} is not valid UTF-8"))))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to `len`).
/// Returns the full message length without the terminator; `buf` may be null to query it.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Mean relative reduction (percent) of `method` against `baseline`, both of length `n`.
///
/// # Safety
/// `baseline` and `method` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_impro(baseline: *const f64, method: *const f64, n: usize, out: *mut f64) -> PmStatus {
    guard(|| {
        let out = nonnull(out, "out")?.cast_mut();
        let v = impro(slice(baseline, n, "baseline")?, slice(method, n, "method")?)?;
        *out = v;
        Ok(())
    })
}

/// MSE, MAD, SAD, Grad and Conn of a predicted matte against ground truth, both row-major `height x width`.
///
/// # Safety
/// `pred` and `gt` must point to `height * width` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_matting_metrics(
    pred: *const f32,
    gt: *const f32,
    height: usize,
    width: usize,
    out: *mut PmMetrics,
) -> PmStatus {
    guard(|| {
        let out = nonnull(out, "out")?.cast_mut();
        let n = height.checked_mul(width).filter(|&n| n > 0).ok_or_else(|| Error::Argument("empty or oversized matte".into()))?;
        let as_tensor = |s: &[f32]| Tensor::new([height, width], s.iter().map(|&v| v as f64).collect());
        let p = as_tensor(slice(pred, n, "pred")?)?;
        let g = as_tensor(slice(gt, n, "gt")?)?;
        let r = MetricRow::compute(&p, &g, &MetricConfig::default())?;
        *out = PmMetrics { mse: r.mse, mad: r.mad, sad: r.sad, grad: r.grad, conn: r.conn };
        Ok(())
    })
}

/// Zero padding and per-scalar width of the coordinate embedding for `n` points.
///
/// # Safety
/// `padding` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_point_pad(n: usize, padding: *mut usize, width: *mut usize) -> PmStatus {
    guard(|| {
        let (pp, wp) = (nonnull(padding, "padding")?.cast_mut(), nonnull(width, "width")?.cast_mut());
        let (p, w) = point_pad(n)?;
        *pp = p;
        *wp = w;
        Ok(())
    })
}

/// Loads a checkpoint directory. Release with [`pm_model_free`].
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_load(dir: *const c_char, out: *mut *mut PmModel) -> PmStatus {
    guard(|| {
        let out = nonnull(out, "out")?.cast_mut();
        *out = std::ptr::null_mut();
        let ckpt = Checkpoint::load(Path::new(text(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(PmModel { ckpt }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pm_model_load`] and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Number of trainable scalars (0 for oracle fixtures).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_param_count(model: *const PmModel, out: *mut usize) -> PmStatus {
    guard(|| {
        let m = &*nonnull(model, "model")?;
        *nonnull(out, "out")?.cast_mut() = m.ckpt.meta.param_count;
        Ok(())
    })
}

/// Predicts an alpha matte.
///
/// `image` is planar RGB `[3, height, width]` in `[0, 1]`; `prompt` uses the prompt-file syntax
/// (`point x y ...`, `box x1 y1 x2 y2` in normalized `[0, 1]` coordinates, `mask path`, optional `opacity 0|1`).
/// `opacity` overrides the file when 0 or 1; pass -1 to keep it (default opaque).
/// `alpha_out` receives `height * width` floats.
///
/// # Safety
/// Pointers must be valid for the stated sizes and `prompt` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pm_model_infer(
    model: *const PmModel,
    image: *const f32,
    height: usize,
    width: usize,
    prompt: *const c_char,
    opacity: c_int,
    alpha_out: *mut f32,
) -> PmStatus {
    guard(|| {
        let m = &*nonnull(model, "model")?;
        let out = nonnull(alpha_out, "alpha_out")?.cast_mut();
        let n = height.checked_mul(width).filter(|&n| n > 0).ok_or_else(|| Error::Argument("empty or oversized image".into()))?;
        let img = Tensor::new([3, height, width], slice(image, 3 * n, "image")?.to_vec())?;
        let pf = PromptFile::parse(text(prompt, "prompt")?, Path::new("."))?;
        let opacity = match opacity {
            -1 => pf.opacity,
            v => OpacityLabel::from_value(u8::try_from(v).map_err(|_| Error::Argument(format!("opacity must be -1, 0 or 1, got {v}")))?)?,
        };
        let alpha = m.ckpt.predict(&[Sample { image: img, prompt: pf.prompt, opacity }])?.remove(0);
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(alpha.data());
        Ok(())
    })
}
