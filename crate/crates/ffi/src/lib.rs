//! C ABI over the `spdnet` library.
//!
//! Every fallible call returns an [`SpdnetStatus`]; on failure the message is
//! kept per thread and read with [`spdnet_last_error_message`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spdnet::net::NetworkState;
use spdnet::spd::{self, RiemannianMetric, SpdMatrix, SymmetricMatrix};
use spdnet::trial::{Dataset, MultichannelTrial};
use spdnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdnetStatus {
    Ok = 0,
    InvalidArgument = 1,
    Domain = 2,
    Numeric = 3,
    State = 4,
    Format = 5,
    Config = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdnetMetric {
    LogEuclidean = 0,
    AffineInvariant = 1,
}

/// A loaded trial archive.
pub struct SpdnetArchive {
    data: Dataset,
}

/// A loaded network.
pub struct SpdnetModel {
    state: NetworkState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SpdnetStatus {
    match err {
        Error::InvalidArgument(_) => SpdnetStatus::InvalidArgument,
        Error::Domain { .. } => SpdnetStatus::Domain,
        Error::Numeric(_) => SpdnetStatus::Numeric,
        Error::State(_) => SpdnetStatus::State,
        Error::Format { .. } => SpdnetStatus::Format,
        Error::Config { .. } => SpdnetStatus::Config,
        Error::Io { .. } => SpdnetStatus::Io,
    }
}

struct Fail(SpdnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SpdnetStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpdnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpdnetStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SpdnetStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail(SpdnetStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn spdnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads an `SPT1` archive.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_archive_load(path: *const c_char, out: *mut *mut SpdnetArchive) -> SpdnetStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let data = spdnet::io::read_archive(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SpdnetArchive { data }));
        Ok(())
    })
}

/// # Safety
/// `archive` must come from [`spdnet_archive_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spdnet_archive_free(archive: *mut SpdnetArchive) {
    if !archive.is_null() {
        drop(Box::from_raw(archive));
    }
}

/// # Safety
/// `archive` must be a live handle; the out pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn spdnet_archive_shape(
    archive: *const SpdnetArchive,
    n_trials: *mut usize,
    n_electrodes: *mut usize,
    n_samples: *mut usize,
    n_classes: *mut usize,
) -> SpdnetStatus {
    guard(|| {
        let a = archive.as_ref().ok_or_else(|| null("archive"))?;
        for (p, v) in [
            (n_trials, a.data.len()),
            (n_electrodes, a.data.n_electrodes()),
            (n_samples, a.data.n_samples()),
            (n_classes, a.data.n_classes),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `archive` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_archive_label(
    archive: *const SpdnetArchive,
    trial: usize,
    out: *mut usize,
) -> SpdnetStatus {
    guard(|| {
        let a = archive.as_ref().ok_or_else(|| null("archive"))?;
        let out = out_arg(out, "out")?;
        *out = *a.data.labels.get(trial).ok_or_else(|| {
            Fail(
                SpdnetStatus::InvalidArgument,
                format!("trial {trial} outside [0, {})", a.data.len()),
            )
        })?;
        Ok(())
    })
}

/// Reads a model file written by `spdnet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_model_load(path: *const c_char, out: *mut *mut SpdnetModel) -> SpdnetStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let state = spdnet::io::read_model(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SpdnetModel { state }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`spdnet_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spdnet_model_free(model: *mut SpdnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_model_n_classes(model: *const SpdnetModel, out: *mut usize) -> SpdnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.state.n_classes();
        Ok(())
    })
}

/// Predicted class of one archived trial.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_model_predict(
    model: *const SpdnetModel,
    archive: *const SpdnetArchive,
    trial: usize,
    out: *mut usize,
) -> SpdnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let a = archive.as_ref().ok_or_else(|| null("archive"))?;
        let out = out_arg(out, "out")?;
        let t = a.data.trials.get(trial).ok_or_else(|| {
            Fail(
                SpdnetStatus::InvalidArgument,
                format!("trial {trial} outside [0, {})", a.data.len()),
            )
        })?;
        *out = m.state.predict(t)?;
        Ok(())
    })
}

/// Predicted class of a raw trial given as `n_electrodes` rows of
/// `n_samples` values.
///
/// # Safety
/// `data` must hold `n_electrodes * n_samples` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_model_predict_raw(
    model: *const SpdnetModel,
    data: *const f64,
    n_electrodes: usize,
    n_samples: usize,
    fs_hz: f64,
    out: *mut usize,
) -> SpdnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(out, "out")?;
        let values = slice_arg(data, n_electrodes.saturating_mul(n_samples), "data")?;
        let trial = MultichannelTrial::new(n_electrodes, n_samples, fs_hz, values.to_vec())?;
        *out = m.state.predict(&trial)?;
        Ok(())
    })
}

/// Sample covariance of a trial (`n_electrodes` rows of `n_samples`
/// values), written row-major into `out` (`n_electrodes²` values).
///
/// # Safety
/// `data` and `out` must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn spdnet_scm(
    data: *const f64,
    n_electrodes: usize,
    n_samples: usize,
    out: *mut f64,
    out_len: usize,
) -> SpdnetStatus {
    guard(|| {
        let values = slice_arg(data, n_electrodes.saturating_mul(n_samples), "data")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != n_electrodes * n_electrodes {
            return Err(Fail(
                SpdnetStatus::InvalidArgument,
                format!("out_len must be {}, got {out_len}", n_electrodes * n_electrodes),
            ));
        }
        let trial = MultichannelTrial::new(n_electrodes, n_samples, 1.0, values.to_vec())?;
        let c = spd::scm(&trial)?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for i in 0..n_electrodes {
            for j in 0..n_electrodes {
                dst[i * n_electrodes + j] = c.get(i, j);
            }
        }
        Ok(())
    })
}

/// Riemannian distance between two SPD matrices given row-major.
///
/// # Safety
/// `a` and `b` must each hold `n * n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdnet_distance(
    a: *const f64,
    b: *const f64,
    n: usize,
    metric: SpdnetMetric,
    out: *mut f64,
) -> SpdnetStatus {
    guard(|| {
        let len = n.saturating_mul(n);
        let a = SpdMatrix::new(SymmetricMatrix::from_row_slice(n, slice_arg(a, len, "a")?)?)?;
        let b = SpdMatrix::new(SymmetricMatrix::from_row_slice(n, slice_arg(b, len, "b")?)?)?;
        let out = out_arg(out, "out")?;
        let metric = match metric {
            SpdnetMetric::LogEuclidean => RiemannianMetric::LogEuclidean,
            SpdnetMetric::AffineInvariant => RiemannianMetric::AffineInvariant,
        };
        *out = spd::distance(&a, &b, metric)?;
        Ok(())
    })
}
