//! C interface to the explanation engine.
//!
//! Every function returns a [`DiveStatus`]; on failure the message is kept
//! per thread and read with [`dive_last_error_message`]. Handles are opaque
//! and owned by the caller until passed to their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dive_core::engine::{EngineConfig, Explanation, Method};
use dive_core::harness::{ExperimentConfig, Models};
use dive_core::models::Classifier;
use dive_core::tensor::{SeededRng, Tensor};
use dive_core::Error;

/// Result codes. The first four match the `dive` binary's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiveStatus {
    Ok = 0,
    Internal = 1,
    Config = 2,
    MissingArtifact = 3,
    NullArgument = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiveMethod {
    Dive = 0,
    DiveMinus = 1,
    XgemPlus = 2,
    RandomMasks = 3,
    FisherChunks = 4,
    FisherSpectral = 5,
}

impl From<DiveMethod> for Method {
    fn from(m: DiveMethod) -> Self {
        match m {
            DiveMethod::Dive => Method::Dive,
            DiveMethod::DiveMinus => Method::DiveMinus,
            DiveMethod::XgemPlus => Method::XgemPlus,
            DiveMethod::RandomMasks => Method::RandomMasks,
            DiveMethod::FisherChunks => Method::FisherChunks,
            DiveMethod::FisherSpectral => Method::FisherSpectral,
        }
    }
}

/// Search hyperparameters. Fill with [`dive_engine_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiveEngineParams {
    pub method: DiveMethod,
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub tau: usize,
    pub delta: f64,
}

impl DiveEngineParams {
    fn engine(&self) -> EngineConfig {
        EngineConfig {
            method: self.method.into(),
            n: self.n,
            lambda: self.lambda,
            alpha: self.alpha,
            gamma: self.gamma,
            lr: self.lr,
            tau: self.tau,
            delta: self.delta,
            ..EngineConfig::default()
        }
    }
}

/// Trained classifier and generators loaded from an output directory.
pub struct DiveModels {
    models: Models,
}

/// Counterfactuals for one input.
pub struct DiveExplanation {
    inner: Explanation,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(e: Error) -> DiveStatus {
    set_error(e.to_string());
    match e.exit_code() {
        2 => DiveStatus::Config,
        3 => DiveStatus::MissingArtifact,
        _ => DiveStatus::Internal,
    }
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DiveStatus>) -> DiveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiveStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DiveStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), DiveStatus> {
    if p.is_null() {
        set_error(format!("{name} is null"));
        Err(DiveStatus::NullArgument)
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], DiveStatus> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copy `src` into a caller buffer of `len` doubles.
///
/// # Safety
/// `dst` must point to `len` writable doubles.
unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), DiveStatus> {
    non_null(dst, "buffer")?;
    if len < src.len() {
        set_error(format!("buffer holds {len} values, {} needed", src.len()));
        return Err(DiveStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn image_tensor(x: &[f64]) -> Result<Tensor, DiveStatus> {
    Tensor::new(vec![1, x.len()], x.to_vec()).map_err(|e| fail(e.into()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dive_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dive_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Default search hyperparameters.
///
/// # Safety
/// `out` must be null or point to a writable `DiveEngineParams`.
#[no_mangle]
pub unsafe extern "C" fn dive_engine_params_default(out: *mut DiveEngineParams) -> DiveStatus {
    guard(|| {
        non_null(out, "out")?;
        let e = EngineConfig::default();
        *out = DiveEngineParams {
            method: DiveMethod::Dive,
            n: e.n,
            lambda: e.lambda,
            alpha: e.alpha,
            gamma: e.gamma,
            lr: e.lr,
            tau: e.tau,
            delta: e.delta,
        };
        Ok(())
    })
}

/// Load the classifier and the generator `method` runs on from a `dive`
/// output directory. Fisher methods also load (or compute and cache) the
/// Fisher estimate.
///
/// # Safety
/// `out_dir` must be a NUL-terminated UTF-8 path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dive_models_load(
    out_dir: *const c_char,
    method: DiveMethod,
    out: *mut *mut DiveModels,
) -> DiveStatus {
    guard(|| {
        non_null(out_dir, "out_dir")?;
        non_null(out, "out")?;
        let dir = CStr::from_ptr(out_dir)
            .to_str()
            .map_err(|_| fail(Error::config("out_dir", "not valid UTF-8")))?;
        let cfg = ExperimentConfig {
            out_dir: PathBuf::from(dir),
            ..ExperimentConfig::default()
        };
        let models = Models::load(&cfg, &[method.into()]).map_err(fail)?;
        *out = Box::into_raw(Box::new(DiveModels { models }));
        Ok(())
    })
}

/// # Safety
/// `models` must be null or a handle from [`dive_models_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dive_models_free(models: *mut DiveModels) {
    if !models.is_null() {
        drop(Box::from_raw(models));
    }
}

fn classifier(m: &DiveModels) -> &Classifier {
    &m.models.classifier
}

/// Classifier probability for one flattened image of `len` pixels.
///
/// # Safety
/// `models` must be a live handle, `image` must hold `len` doubles and
/// `prob` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dive_classifier_predict(
    models: *const DiveModels,
    image: *const f64,
    len: usize,
    prob: *mut f64,
) -> DiveStatus {
    guard(|| {
        non_null(models, "models")?;
        non_null(prob, "prob")?;
        let x = slice(image, len, "image")?;
        let p = classifier(&*models).predict(&image_tensor(x)?).map_err(|e| fail(e.into()))?;
        *prob = p[0];
        Ok(())
    })
}

/// Search for counterfactuals of one image.
///
/// # Safety
/// `models` must be a live handle, `image` must hold `len` doubles, `params`
/// must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dive_explain(
    models: *const DiveModels,
    image: *const f64,
    len: usize,
    params: *const DiveEngineParams,
    seed: u64,
    out: *mut *mut DiveExplanation,
) -> DiveStatus {
    guard(|| {
        non_null(models, "models")?;
        non_null(params, "params")?;
        non_null(out, "out")?;
        let x = slice(image, len, "image")?;
        let cfg = (*params).engine();
        let mut rng = SeededRng::new(seed);
        let inner = (*models).models.explain(x, &cfg, &mut rng).map_err(fail)?;
        *out = Box::into_raw(Box::new(DiveExplanation { inner }));
        Ok(())
    })
}

/// # Safety
/// `ex` must be null or a handle from [`dive_explain`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dive_explanation_free(ex: *mut DiveExplanation) {
    if !ex.is_null() {
        drop(Box::from_raw(ex));
    }
}

/// Number of counterfactuals, or 0 for a null handle.
///
/// # Safety
/// `ex` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dive_explanation_count(ex: *const DiveExplanation) -> usize {
    ex.as_ref().map_or(0, |e| e.inner.set.n)
}

/// Pixels per counterfactual image, or 0 for a null handle.
///
/// # Safety
/// `ex` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dive_explanation_pixels(ex: *const DiveExplanation) -> usize {
    ex.as_ref().map_or(0, |e| e.inner.reconstruction.len())
}

/// Optimisation steps taken.
///
/// # Safety
/// `ex` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dive_explanation_steps(ex: *const DiveExplanation) -> usize {
    ex.as_ref().map_or(0, |e| e.inner.set.final_step().step)
}

fn index_check(ex: &DiveExplanation, i: usize) -> Result<(), DiveStatus> {
    if i >= ex.inner.set.n {
        set_error(format!("explanation {i} out of range for {}", ex.inner.set.n));
        return Err(DiveStatus::Config);
    }
    Ok(())
}

/// Copy counterfactual `i` into `buf` (at least [`dive_explanation_pixels`]
/// doubles).
///
/// # Safety
/// `ex` must be a live handle and `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dive_explanation_counterfactual(
    ex: *const DiveExplanation,
    i: usize,
    buf: *mut f64,
    len: usize,
) -> DiveStatus {
    guard(|| {
        non_null(ex, "ex")?;
        let ex = &*ex;
        index_check(ex, i)?;
        copy_out(ex.inner.counterfactuals.row(i), buf, len)
    })
}

/// Classifier output on counterfactual `i` and whether it flips the decision.
///
/// # Safety
/// `ex` must be a live handle; `prob` and `valid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dive_explanation_outcome(
    ex: *const DiveExplanation,
    i: usize,
    prob: *mut f64,
    valid: *mut bool,
) -> DiveStatus {
    guard(|| {
        non_null(ex, "ex")?;
        non_null(prob, "prob")?;
        non_null(valid, "valid")?;
        let ex = &*ex;
        index_check(ex, i)?;
        *prob = ex.inner.set.final_step().f[i];
        *valid = ex.inner.set.valid[i];
        Ok(())
    })
}
