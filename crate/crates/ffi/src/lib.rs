//! C interface to tailcal: softmax, prior handles, logit correction and model inference.
//!
//! Every fallible call returns a `TC_*` status. On failure the message is kept per
//! thread and can be read with `tc_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tailcal::adjust::{adjust_logits, AdjustMethod, AdjustmentSpec};
use tailcal::model::{load_model, Model};
use tailcal::numerics::{softmax, Matrix, ProbVector};
use tailcal::prior::{load_prior, EffectivePrior, EstimatorKind};
use tailcal::scores::LogitMatrix;
use tailcal::Error;

pub const TC_OK: i32 = 0;
pub const TC_ERR_NULL: i32 = 1;
/// Bad argument or incompatible configuration.
pub const TC_ERR_INVALID: i32 = 2;
/// Unreadable or malformed input, or mismatched sizes.
pub const TC_ERR_INPUT: i32 = 3;
/// Numerical failure.
pub const TC_ERR_NUMERIC: i32 = 4;
pub const TC_ERR_PANIC: i32 = 5;

pub const TC_METHOD_NONE: i32 = 0;
pub const TC_METHOD_CLASS_FREQUENCY: i32 = 1;
pub const TC_METHOD_P2P_CE: i32 = 2;
pub const TC_METHOD_P2P_LA: i32 = 3;

pub const TC_ESTIMATOR_TRAIN_SIDE: i32 = 0;
pub const TC_ESTIMATOR_VAL_SIDE: i32 = 1;
pub const TC_ESTIMATOR_TRAIN_REWEIGHTED: i32 = 2;
pub const TC_ESTIMATOR_AVERAGED: i32 = 3;
pub const TC_ESTIMATOR_FREQUENCY: i32 = 4;

/// Opaque estimated prior.
pub struct TcPrior(EffectivePrior);

/// Opaque trained model.
pub struct TcModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> i32 {
    match e.exit_code() {
        2 => TC_ERR_INVALID,
        3 => TC_ERR_INPUT,
        _ => TC_ERR_NUMERIC,
    }
}

fn guard(f: impl FnOnce() -> Result<(), i32>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TC_OK,
        Ok(Err(code)) => code,
        Err(_) => {
            set_error("internal panic".into());
            TC_ERR_PANIC
        }
    }
}

fn fail(e: Error) -> i32 {
    let code = status_of(&e);
    set_error(e.to_string());
    code
}

fn null(what: &str) -> i32 {
    set_error(format!("{what} is null"));
    TC_ERR_NULL
}

fn invalid(msg: String) -> i32 {
    set_error(msg);
    TC_ERR_INVALID
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], i32> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], i32> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn path_of(p: *const c_char) -> Result<PathBuf, i32> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8".into()))
}

fn method_of(m: i32) -> Result<AdjustMethod, i32> {
    match m {
        TC_METHOD_NONE => Ok(AdjustMethod::None),
        TC_METHOD_CLASS_FREQUENCY => Ok(AdjustMethod::ClassFrequency),
        TC_METHOD_P2P_CE => Ok(AdjustMethod::P2pCe),
        TC_METHOD_P2P_LA => Ok(AdjustMethod::P2pLa),
        other => Err(invalid(format!("unknown method code {other}"))),
    }
}

fn estimator_of(k: i32) -> Result<EstimatorKind, i32> {
    match k {
        TC_ESTIMATOR_TRAIN_SIDE => Ok(EstimatorKind::TrainSide),
        TC_ESTIMATOR_VAL_SIDE => Ok(EstimatorKind::ValSide),
        TC_ESTIMATOR_TRAIN_REWEIGHTED => Ok(EstimatorKind::TrainReweighted),
        TC_ESTIMATOR_AVERAGED => Ok(EstimatorKind::Averaged),
        TC_ESTIMATOR_FREQUENCY => Ok(EstimatorKind::Frequency),
        other => Err(invalid(format!("unknown estimator code {other}"))),
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn tc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Numerically stable softmax of `n` scores into `out`.
///
/// # Safety
/// `z` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_softmax(z: *const f64, n: usize, out: *mut f64) -> i32 {
    guard(|| {
        let z = slice(z, n, "z")?;
        let out = slice_mut(out, n, "out")?;
        let p = softmax(z).map_err(fail)?;
        out.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Builds a prior from `n` probabilities (floored and renormalized), tagged with the
/// estimator and the number of rows it was computed from.
///
/// # Safety
/// `probs` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_prior_new(
    probs: *const f64,
    n: usize,
    estimator: i32,
    samples: usize,
    alpha: f64,
    out: *mut *mut TcPrior,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = slice(probs, n, "probs")?;
        let kind = estimator_of(estimator)?;
        let pv = tailcal::prior::floor_and_normalize(p).map_err(fail)?;
        let prior = EffectivePrior::new(pv, kind, samples).and_then(|e| e.with_alpha(alpha)).map_err(fail)?;
        *out = Box::into_raw(Box::new(TcPrior(prior)));
        Ok(())
    })
}

/// Loads a prior.json.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_prior_load(path: *const c_char, out: *mut *mut TcPrior) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_of(path)?;
        *out = Box::into_raw(Box::new(TcPrior(load_prior(p).map_err(fail)?)));
        Ok(())
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_prior_num_classes(prior: *const TcPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.0.num_classes())
}

/// Copies the probabilities into `out`, which holds `n` doubles.
///
/// # Safety
/// `prior` must be a live handle and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_prior_probs(prior: *const TcPrior, out: *mut f64, n: usize) -> i32 {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if n != p.0.num_classes() {
            return Err(fail(Error::Dimension(format!("buffer holds {n}, prior has {}", p.0.num_classes()))));
        }
        slice_mut(out, n, "out")?.copy_from_slice(p.0.probs.as_slice());
        Ok(())
    })
}

/// # Safety
/// `prior` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tc_prior_free(prior: *mut TcPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Corrects a row-major `rows × classes` logit block into `out`.
/// `target` may be null for the uniform prior. `alpha < 0` means the prior's own α.
///
/// # Safety
/// `logits` and `out` must point to `rows * classes` doubles, `target` to `classes` doubles
/// when non-null, and `prior` must be a live handle unless `method` is `TC_METHOD_NONE`.
#[no_mangle]
pub unsafe extern "C" fn tc_adjust_logits(
    logits: *const f64,
    rows: usize,
    classes: usize,
    method: i32,
    prior: *const TcPrior,
    target: *const f64,
    alpha: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let n = rows.checked_mul(classes).ok_or_else(|| invalid("size overflow".into()))?;
        let z = slice(logits, n, "logits")?;
        let out = slice_mut(out, n, "out")?;
        let method = method_of(method)?;
        let spec = if method == AdjustMethod::None {
            AdjustmentSpec::none(classes)
        } else {
            let est = prior.as_ref().ok_or_else(|| null("prior"))?.0.clone();
            let target = if target.is_null() {
                ProbVector::uniform(classes)
            } else {
                ProbVector::new(slice(target, classes, "target")?.to_vec())
            }
            .map_err(fail)?;
            let a = if alpha < 0.0 { est.alpha } else { alpha };
            AdjustmentSpec::new(method, est, target, a)
        }
        .map_err(fail)?;
        let m = Matrix::from_vec(rows, classes, z.to_vec()).and_then(LogitMatrix::new).map_err(fail)?;
        let adjusted = adjust_logits(&m, &spec).map_err(fail)?;
        out.copy_from_slice(adjusted.matrix().values());
        Ok(())
    })
}

/// Loads a model.json.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_model_load(path: *const c_char, out: *mut *mut TcModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_of(path)?;
        let saved = load_model(p).map_err(fail)?;
        *out = Box::into_raw(Box::new(TcModel(saved.model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_model_num_classes(model: *const TcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_classes())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_model_dims(model: *const TcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dims())
}

/// Logits for a row-major `rows × dims` feature block; `out` holds `rows × classes`.
///
/// # Safety
/// `model` must be a live handle and the buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn tc_model_predict_logits(
    model: *const TcModel,
    features: *const f64,
    rows: usize,
    dims: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let n = rows.checked_mul(dims).ok_or_else(|| invalid("size overflow".into()))?;
        let x = Matrix::from_vec(rows, dims, slice(features, n, "features")?.to_vec()).map_err(fail)?;
        let z = m.predict_logits(&x).map_err(fail)?;
        slice_mut(out, rows * m.num_classes(), "out")?.copy_from_slice(z.matrix().values());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tc_model_free(model: *mut TcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
