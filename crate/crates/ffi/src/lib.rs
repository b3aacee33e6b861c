//! C ABI over the `ordmeta` library.
//!
//! Every fallible function returns an [`OmStatus`]; on failure the message is
//! available from [`om_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Panics never cross the
//! boundary; they surface as `OM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use ordmeta::dataset::{self, Recording};
use ordmeta::features;
use ordmeta::metamodel::{self, Metamodel, ThresholdSet};
use ordmeta::stats;
use ordmeta::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Training = 5,
    Panic = 6,
}

/// Recordings loaded from a dataset directory.
pub struct OmDataset {
    recordings: Vec<Recording>,
}

/// A stored metamodel.
pub struct OmMetamodel {
    model: Metamodel,
}

/// Subject-level predictions, sorted by subject id.
pub struct OmPredictions {
    rows: Vec<(CString, f64)>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> OmStatus {
    match e {
        Error::Io { .. } => OmStatus::Io,
        Error::Data(_) | Error::Json(_) | Error::Csv(_) => OmStatus::Data,
        Error::InvalidArgument(_) | Error::Config(_) => OmStatus::InvalidArgument,
        Error::Training(_) => OmStatus::Training,
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

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> OmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            OmStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            OmStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            OmStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    nonnull(p, what)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn om_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn om_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads every series under `dir/series`, with phenotypes from
/// `dir/phenotypes.csv` where listed.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_dataset_load(dir: *const c_char, out: *mut *mut OmDataset) -> OmStatus {
    guard(|| {
        nonnull(out, "out")?;
        let dir = path_arg(dir, "dir")?;
        let recordings = dataset::load_recordings(&dir)?;
        *out = Box::into_raw(Box::new(OmDataset { recordings }));
        Ok(())
    })
}

/// Number of subjects in the dataset.
///
/// # Safety
/// `ds` must come from `om_dataset_load`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_dataset_len(ds: *const OmDataset, out: *mut usize) -> OmStatus {
    guard(|| {
        nonnull(ds, "dataset")?;
        nonnull(out, "out")?;
        *out = (*ds).recordings.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must come from `om_dataset_load` (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn om_dataset_free(ds: *mut OmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a metamodel directory (`meta.json` plus `base_<k>.json`).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_metamodel_load(dir: *const c_char, out: *mut *mut OmMetamodel) -> OmStatus {
    guard(|| {
        nonnull(out, "out")?;
        let dir = path_arg(dir, "dir")?;
        let model = Metamodel::load(&dir)?;
        *out = Box::into_raw(Box::new(OmMetamodel { model }));
        Ok(())
    })
}

/// Number of thresholds (base models) in the bank.
///
/// # Safety
/// `m` must come from `om_metamodel_load`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_metamodel_threshold_count(m: *const OmMetamodel, out: *mut usize) -> OmStatus {
    guard(|| {
        nonnull(m, "metamodel")?;
        nonnull(out, "out")?;
        *out = (*m).model.bank.len();
        Ok(())
    })
}

/// # Safety
/// `m` must come from `om_metamodel_load` (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn om_metamodel_free(m: *mut OmMetamodel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Predicts one score per subject of `ds`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_metamodel_predict(
    m: *const OmMetamodel,
    ds: *const OmDataset,
    out: *mut *mut OmPredictions,
) -> OmStatus {
    guard(|| {
        nonnull(m, "metamodel")?;
        nonnull(ds, "dataset")?;
        nonnull(out, "out")?;
        let pred = (*m).model.predict_recordings(&(*ds).recordings)?;
        let rows = pred
            .into_iter()
            .map(|(id, v)| Ok((CString::new(id).map_err(|_| Error::data("subject id contains NUL"))?, v)))
            .collect::<Result<Vec<_>, Error>>()?;
        *out = Box::into_raw(Box::new(OmPredictions { rows }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from `om_metamodel_predict`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_predictions_len(p: *const OmPredictions, out: *mut usize) -> OmStatus {
    guard(|| {
        nonnull(p, "predictions")?;
        nonnull(out, "out")?;
        *out = (*p).rows.len();
        Ok(())
    })
}

/// Row `i`: subject id (borrowed from `p`) and predicted score.
///
/// # Safety
/// `p` must be live; `id` and `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_predictions_get(
    p: *const OmPredictions,
    i: usize,
    id: *mut *const c_char,
    score: *mut f64,
) -> OmStatus {
    guard(|| {
        nonnull(p, "predictions")?;
        nonnull(id, "id")?;
        nonnull(score, "score")?;
        let rows = &(*p).rows;
        let (s, v) = rows
            .get(i)
            .ok_or_else(|| Error::invalid(format!("row {i} out of range ({} rows)", rows.len())))?;
        *id = s.as_ptr();
        *score = *v;
        Ok(())
    })
}

/// # Safety
/// `p` must come from `om_metamodel_predict` (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn om_predictions_free(p: *mut OmPredictions) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

unsafe fn doubles<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    nonnull(p, what)?;
    Ok(slice::from_raw_parts(p, n))
}

/// Pearson correlation of two length-`n` arrays.
///
/// # Safety
/// `x` and `y` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> OmStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = stats::pearson(doubles(x, n, "x")?, doubles(y, n, "y")?)?;
        Ok(())
    })
}

/// t statistic and two-tailed p of a correlation `r` over `n` pairs
/// (df = n − 2).
///
/// # Safety
/// `t` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_corr_significance(r: f64, n: usize, t: *mut f64, p: *mut f64) -> OmStatus {
    guard(|| {
        nonnull(t, "t")?;
        nonnull(p, "p")?;
        let c = stats::corr_significance(r, n)?;
        *t = c.t_stat;
        *p = c.p_two_tailed;
        Ok(())
    })
}

/// Writes `bits[k] = score > thresholds[k]` for `n` strictly increasing,
/// non-integer thresholds.
///
/// # Safety
/// `thresholds` must point to `n` doubles and `bits` to `n` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn om_threshold_labels(
    score: u8,
    thresholds: *const f64,
    n: usize,
    bits: *mut u8,
) -> OmStatus {
    guard(|| {
        let set = ThresholdSet::new(doubles(thresholds, n, "thresholds")?.to_vec())?;
        nonnull(bits, "bits")?;
        if score > dataset::MAX_SCORE {
            return Err(Error::invalid(format!("score {score} out of range")).into());
        }
        let labels = metamodel::threshold_labels(f64::from(score), &set);
        let out = slice::from_raw_parts_mut(bits, n);
        for (o, l) in out.iter_mut().zip(labels) {
            *o = l as u8;
        }
        Ok(())
    })
}

/// Length of the strict upper triangle of an `rois × rois` matrix.
#[no_mangle]
pub extern "C" fn om_upper_triangle_len(rois: usize) -> usize {
    features::connectivity_len(rois)
}

/// Windows of `length` taken every `stride` rows from `t` rows.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn om_window_count(t: usize, length: usize, stride: usize, out: *mut usize) -> OmStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = dataset::window_count(t, length, stride)?;
        Ok(())
    })
}
