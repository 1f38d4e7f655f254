//! C interface to the point cloud quality toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_load` /
//! `*_extract` functions and released with the matching `*_free`. Every
//! fallible call returns a [`PktStatus`]; on failure the message is kept per
//! thread and readable through [`pkt_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pkt_pcqa::cloud::{load_ply, PointCloud};
use pkt_pcqa::eval::ModelPredictor;
use pkt_pcqa::kce::{extract_key_clusters, KceConfig, KeyClusterSet};
use pkt_pcqa::metrics;
use pkt_pcqa::nn::Checkpoint;
use pkt_pcqa::train::KceCache;
use pkt_pcqa::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PktStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    MalformedInput = 4,
    InvalidArgument = 5,
    CloudTooSmall = 6,
    ConfigMismatch = 7,
    ConstantVector = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Point cloud handle.
pub struct PktCloud(PointCloud);

/// Key-cluster set handle.
pub struct PktKeyClusters(KeyClusterSet);

/// Loaded quality model handle.
pub struct PktModel(ModelPredictor);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> PktStatus {
    match err {
        Error::Io { .. } => PktStatus::Io,
        Error::MissingProperty(_)
        | Error::MalformedHeader(_)
        | Error::TruncatedBody(_)
        | Error::MalformedKeyClusters(_)
        | Error::Checkpoint(_)
        | Error::InvalidCloud(_) => PktStatus::MalformedInput,
        Error::CloudTooSmall { .. } => PktStatus::CloudTooSmall,
        Error::ConfigMismatch(_) => PktStatus::ConfigMismatch,
        Error::ConstantVector => PktStatus::ConstantVector,
        _ => PktStatus::InvalidArgument,
    }
}

struct Failure(PktStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PktStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PktStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PktStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PktStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(PktStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pkt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pkt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads an ASCII or binary little-endian PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pkt_cloud_load(path: *const c_char, out: *mut *mut PktCloud) -> PktStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let pc = load_ply(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PktCloud(pc)));
        Ok(())
    })
}

/// Builds a cloud from `n` xyz triples and `n` rgb triples.
///
/// # Safety
/// `xyz` must hold `3 * n` doubles, `rgb` `3 * n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_cloud_from_arrays(
    xyz: *const f64,
    rgb: *const u8,
    n: usize,
    out: *mut *mut PktCloud,
) -> PktStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if xyz.is_null() || rgb.is_null() {
            return Err(null("xyz/rgb"));
        }
        let xyz = std::slice::from_raw_parts(xyz, 3 * n);
        let rgb = std::slice::from_raw_parts(rgb, 3 * n);
        let coords = xyz.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let colors = rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let pc = PointCloud::new(coords, colors, "ffi")?;
        *out = Box::into_raw(Box::new(PktCloud(pc)));
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pkt_cloud_len(cloud: *const PktCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pkt_cloud_free(cloud: *mut PktCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Extracts `beta` key clusters of `k` points each with default settings.
///
/// # Safety
/// `cloud` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_keyclusters_extract(
    cloud: *const PktCloud,
    beta: usize,
    k: usize,
    out: *mut *mut PktKeyClusters,
) -> PktStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let pc = handle(cloud, "cloud")?;
        let cfg = KceConfig { beta, k, ..KceConfig::default() };
        let set = extract_key_clusters(&pc.0, &cfg)?;
        *out = Box::into_raw(Box::new(PktKeyClusters(set)));
        Ok(())
    })
}

/// Writes `beta` and `k` of a key-cluster set.
///
/// # Safety
/// `kc` must be a live handle; `beta` and `k` writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_keyclusters_shape(kc: *const PktKeyClusters, beta: *mut usize, k: *mut usize) -> PktStatus {
    guard(|| {
        let set = &handle(kc, "kc")?.0;
        *out_ptr(beta, "beta")? = set.beta;
        *out_ptr(k, "k")? = set.k;
        Ok(())
    })
}

/// Copies the `beta * k * 6` member features (local xyz, rgb in [0, 1]).
///
/// # Safety
/// `kc` must be a live handle and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pkt_keyclusters_copy(kc: *const PktKeyClusters, buf: *mut f64, len: usize) -> PktStatus {
    guard(|| {
        let set = &handle(kc, "kc")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < set.clusters.len() {
            return Err(Failure(
                PktStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", set.clusters.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, set.clusters.len()).copy_from_slice(&set.clusters);
        Ok(())
    })
}

/// Saves the set in the toolkit's key-cluster file format.
///
/// # Safety
/// `kc` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pkt_keyclusters_save(kc: *const PktKeyClusters, path: *const c_char) -> PktStatus {
    guard(|| {
        let set = &handle(kc, "kc")?.0;
        set.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `kc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pkt_keyclusters_free(kc: *mut PktKeyClusters) {
    if !kc.is_null() {
        drop(Box::from_raw(kc));
    }
}

/// Loads a checkpoint written by `pkt-pcqa train`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_model_load(path: *const c_char, out: *mut *mut PktModel) -> PktStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ck = Checkpoint::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PktModel(ModelPredictor::new(ck, KceCache::default()))));
        Ok(())
    })
}

/// Predicted MOS on the model's scale and level (0 bad, 1 fair, 2 excellent).
///
/// # Safety
/// `model` and `cloud` must be live handles; `mos` and `level` writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_model_score(
    model: *const PktModel,
    cloud: *const PktCloud,
    mos: *mut f64,
    level: *mut i32,
) -> PktStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let pc = &handle(cloud, "cloud")?.0;
        let mos = out_ptr(mos, "mos")?;
        let level = out_ptr(level, "level")?;
        let (t, l) = m.predict_cloud(pc)?;
        *mos = m.denormalize(t);
        *level = l.index() as i32;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pkt_model_free(model: *mut PktModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn pair<'a>(x: *const f64, y: *const f64, n: usize) -> Result<(&'a [f64], &'a [f64]), Failure> {
    if x.is_null() || y.is_null() {
        return Err(null("x/y"));
    }
    Ok((std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(y, n)))
}

/// Pearson correlation of two length-`n` arrays.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_plcc(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> PktStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (x, y) = pair(x, y, n)?;
        *out = metrics::plcc(x, y)?;
        Ok(())
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pkt_srocc(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> PktStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (x, y) = pair(x, y, n)?;
        *out = metrics::srocc(x, y)?;
        Ok(())
    })
}
