//! C ABI over `medresp`.
//!
//! Objects cross the boundary as opaque handles created by `mr_*_new` /
//! `mr_*_read` style constructors and released with the matching
//! `mr_*_free`. Every fallible call returns an [`MrStatus`]; on failure the
//! message is kept per thread and can be fetched with [`mr_last_error`].
//! Panics are caught and reported as `MR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use medresp::config::RunConfig;
use medresp::eval::metrics::average_precision;
use medresp::fnc::{compute_fnc_with, FncConfig};
use medresp::kernels::{orthonormalize, pabs_similarity, Basis};
use medresp::svm::{decision_values, solve_binary_smo, SvmConfig, SvmModel};
use medresp::{pipeline, Error, MatrixF64};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    Panic = 6,
}

/// Dense row-major matrix of doubles.
pub struct MrMatrix {
    inner: MatrixF64,
}

/// Orthonormal basis for the span of a set of spatial maps.
pub struct MrBasis {
    inner: Basis,
}

/// Trained binary SVM on a precomputed kernel.
pub struct MrSvmModel {
    inner: SvmModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> MrStatus {
    if e.is_config() {
        return MrStatus::Config;
    }
    match e.root() {
        Error::Io { .. } | Error::MissingFile(_) => MrStatus::Io,
        Error::BadMagic(_) | Error::BadVersion(_) | Error::Truncated { .. } | Error::Manifest(_) => MrStatus::Io,
        Error::NonFinite { .. } | Error::ZeroVariance(_) | Error::ZeroVarianceVoxel(_) | Error::RankDeficient(_) => {
            MrStatus::Numerical
        }
        _ => MrStatus::InvalidArgument,
    }
}

struct Fail(MrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MrStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for [`mr_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MrStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next `mr_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ matrix

/// Copies `rows * cols` row-major values into a new matrix. NaN and
/// infinite values are rejected.
///
/// # Safety
/// `data` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut MrMatrix) -> MrStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(MrStatus::InvalidArgument, "matrix size overflows".into()))?;
        let values = slice_arg(data, n, "data")?.to_vec();
        let inner = MatrixF64::new(rows, cols, values)?;
        inner.ensure_finite()?;
        put(out, MrMatrix { inner })
    })
}

/// Reads a matrix container file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_read(path: *const c_char, out: *mut *mut MrMatrix) -> MrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, MrMatrix { inner: medresp::read_matrix(path)? })
    })
}

/// # Safety
/// `m` must be a live matrix handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_write(m: *const MrMatrix, path: *const c_char) -> MrStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        medresp::write_matrix(&m.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_rows(m: *const MrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// Number of columns, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_cols(m: *const MrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copies the row-major values into `buf`, which must hold `rows * cols`.
///
/// # Safety
/// `m` must be a live matrix handle; `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_copy(m: *const MrMatrix, buf: *mut f64, len: usize) -> MrStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        let src = m.inner.values();
        if len < src.len() {
            return Err(Fail(
                MrStatus::InvalidArgument,
                format!("buffer holds {len} values, matrix has {}", src.len()),
            ));
        }
        if !src.is_empty() {
            if buf.is_null() {
                return Err(null("buffer"));
            }
            ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_matrix_free(m: *mut MrMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

// ----------------------------------------------------------------- kernels

/// Orthonormal basis for the span of the rows of `maps` (`K × V`).
///
/// # Safety
/// `maps` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_basis_new(maps: *const MrMatrix, out: *mut *mut MrBasis) -> MrStatus {
    guard(|| {
        let maps = handle(maps, "maps")?;
        put(out, MrBasis { inner: orthonormalize(&maps.inner)? })
    })
}

/// # Safety
/// `b` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_basis_free(b: *mut MrBasis) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Sum of principal-angle cosines between two bases of equal shape.
///
/// # Safety
/// `a`, `b` must be live basis handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_pabs_similarity(a: *const MrBasis, b: *const MrBasis, out: *mut f64) -> MrStatus {
    guard(|| {
        let s = pabs_similarity(&handle(a, "basis a")?.inner, &handle(b, "basis b")?.inner)?;
        put_value(out, s)
    })
}

/// `tanh(gamma * similarity)`.
///
/// # Safety
/// As for [`mr_pabs_similarity`].
#[no_mangle]
pub unsafe extern "C" fn mr_pabs_kernel(a: *const MrBasis, b: *const MrBasis, gamma: f64, out: *mut f64) -> MrStatus {
    guard(|| {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Fail(MrStatus::InvalidArgument, "gamma must be finite and > 0".into()));
        }
        let s = pabs_similarity(&handle(a, "basis a")?.inner, &handle(b, "basis b")?.inner)?;
        put_value(out, (gamma * s).tanh())
    })
}

// --------------------------------------------------------------------- FNC

/// Correlation matrix of the columns of `tc` (`T × K`), optionally after
/// removing each column's linear trend.
///
/// # Safety
/// `tc` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_fnc_compute(tc: *const MrMatrix, detrend: c_int, out: *mut *mut MrMatrix) -> MrStatus {
    guard(|| {
        let tc = handle(tc, "time courses")?;
        let cfg = FncConfig {
            detrend: detrend != 0,
            bandpass: None,
        };
        put(out, MrMatrix { inner: compute_fnc_with(&tc.inner, &cfg)?.into_matrix() })
    })
}

// ----------------------------------------------------------------- metrics

/// Step-wise average precision; `labels[i]` nonzero marks a positive.
///
/// # Safety
/// `labels` and `scores` must each point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn mr_average_precision(labels: *const u8, scores: *const f64, n: usize, out: *mut f64) -> MrStatus {
    guard(|| {
        let y: Vec<bool> = slice_arg(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        let ap = average_precision(&y, slice_arg(scores, n, "scores")?)?;
        put_value(out, ap)
    })
}

// --------------------------------------------------------------------- SVM

/// Trains a binary SVM on an `n × n` precomputed kernel with labels ±1.
/// `class_weighted` nonzero scales each class's bound by `n / (2 n_class)`.
///
/// # Safety
/// `kernel` must be a live handle, `y` must point to `n` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_svm_train(
    kernel: *const MrMatrix,
    y: *const f64,
    n: usize,
    c: f64,
    class_weighted: c_int,
    seed: u64,
    out: *mut *mut MrSvmModel,
) -> MrStatus {
    guard(|| {
        let k = handle(kernel, "kernel")?;
        let cfg = SvmConfig {
            c,
            class_weighted: class_weighted != 0,
            seed,
            ..SvmConfig::default()
        };
        let model = solve_binary_smo(&k.inner, slice_arg(y, n, "labels")?, &cfg)?;
        put(out, MrSvmModel { inner: model })
    })
}

/// Decision values for the rows of a test-by-train kernel block; `out`
/// must hold one value per row.
///
/// # Safety
/// `model` and `k_test_train` must be live handles; `out` must have room for
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mr_svm_decision(
    model: *const MrSvmModel,
    k_test_train: *const MrMatrix,
    out: *mut f64,
    len: usize,
) -> MrStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let f = decision_values(&m.inner, &handle(k_test_train, "kernel")?.inner)?;
        if len < f.len() {
            return Err(Fail(MrStatus::InvalidArgument, format!("buffer holds {len} values, need {}", f.len())));
        }
        if !f.is_empty() {
            if out.is_null() {
                return Err(null("output buffer"));
            }
            ptr::copy_nonoverlapping(f.as_ptr(), out, f.len());
        }
        Ok(())
    })
}

/// Dual objective of the trained model on its training kernel.
///
/// # Safety
/// `model` and `kernel` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_svm_dual_objective(model: *const MrSvmModel, kernel: *const MrMatrix, out: *mut f64) -> MrStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let k = handle(kernel, "kernel")?;
        if k.inner.shape() != (m.inner.alphas.len(), m.inner.alphas.len()) {
            return Err(Fail(MrStatus::InvalidArgument, "kernel does not match the training set".into()));
        }
        put_value(out, m.inner.dual_objective(&k.inner))
    })
}

/// Bias term of the decision function.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_svm_bias(model: *const MrSvmModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.inner.bias)
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_svm_free(model: *mut MrSvmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------- pipeline

/// Validates a JSON run configuration (NULL or "" means all defaults).
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mr_config_validate(config_json: *const c_char) -> MrStatus {
    guard(|| {
        parse_config(config_json)?;
        Ok(())
    })
}

unsafe fn parse_config(config_json: *const c_char) -> Result<RunConfig, Fail> {
    if config_json.is_null() {
        return Ok(RunConfig::default());
    }
    let text = str_arg(config_json, "config")?;
    if text.trim().is_empty() {
        return Ok(RunConfig::default());
    }
    Ok(RunConfig::from_json(text)?)
}

/// Runs the whole pipeline (simulate through report) into `out_dir`.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out_dir` must be
/// a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn mr_pipeline_run(config_json: *const c_char, out_dir: *const c_char) -> MrStatus {
    guard(|| {
        let cfg = parse_config(config_json)?;
        let out = PathBuf::from(str_arg(out_dir, "out_dir")?);
        pipeline::run_all(&cfg, &out)?;
        Ok(())
    })
}
