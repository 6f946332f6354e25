//! C ABI over the `mlsd` library.
//!
//! Conventions:
//! - every fallible function returns an [`MlsdStatus`]; results go through out
//!   pointers that are written only on success;
//! - handles are opaque and owned by the caller once returned, and must be
//!   released with the matching `*_free` function;
//! - on failure a message is kept per thread and can be read with
//!   [`mlsd_last_error`] until the next failing call on that thread;
//! - panics never cross the boundary, they surface as `MLSD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mlsd::corpus::Scheme;
use mlsd::embed_store::{cosine_similarity, euclidean_distance, load_store, EmbeddingStore};
use mlsd::metric::checkpoint::load_checkpoint;
use mlsd::metric::MetricModel;
use mlsd::stance::{macro_f1, paired_t_test};
use mlsd::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlsdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimMismatch = 5,
    NotFound = 6,
    Numeric = 7,
    Panic = 8,
}

/// Label scheme selector for [`mlsd_macro_f1`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlsdScheme {
    /// FAVOR, AGAINST, NEITHER; scored on FAVOR and AGAINST.
    ThreeWay = 0,
    /// SUPPORT, REFUTE, COMMENT, UNRELATED; all four scored.
    FourWay = 1,
}

/// Opaque embedding store handle.
pub struct MlsdStore {
    inner: EmbeddingStore,
}

/// Opaque metric model handle (projection plus source/noise head).
pub struct MlsdModel {
    inner: MetricModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MlsdStatus {
    match e {
        Error::Io { .. } => MlsdStatus::Io,
        Error::BadMagic | Error::Truncated(_) | Error::Json(_) | Error::Csv(_) | Error::EmptyFile | Error::UnknownStance(_) | Error::SchemeMismatch { .. } | Error::DuplicateId(_) | Error::MalformedRow { .. } => {
            MlsdStatus::Format
        }
        Error::DimMismatch { .. } => MlsdStatus::DimMismatch,
        Error::MissingEmbedding(_) => MlsdStatus::NotFound,
        Error::NonFinite(_) | Error::ZeroNorm | Error::Diverged(_) => MlsdStatus::Numeric,
        _ => MlsdStatus::InvalidArgument,
    }
}

struct Fail(MlsdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MlsdStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MlsdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlsdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            MlsdStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MlsdStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mlsd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mlsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an embedding store file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlsd_store_load(path: *const c_char, out: *mut *mut MlsdStore) -> MlsdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let store = load_store(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(MlsdStore { inner: store })), "out")
    })
}

/// Releases a store handle. Null is ignored.
///
/// # Safety
/// `store` must come from [`mlsd_store_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mlsd_store_free(store: *mut MlsdStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlsd_store_dim(store: *const MlsdStore, out: *mut usize) -> MlsdStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        write_out(out, s.inner.dim(), "out")
    })
}

/// # Safety
/// `store` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlsd_store_count(store: *const MlsdStore, out: *mut usize) -> MlsdStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        write_out(out, s.inner.len(), "out")
    })
}

/// Copies the vector of `id` into `out`, which must hold `len == dim` floats.
///
/// # Safety
/// `store` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mlsd_store_get(store: *const MlsdStore, id: u64, out: *mut f32, len: usize) -> MlsdStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| null("store"))?;
        let v = s.inner.vector(id)?;
        if len != v.len() {
            return Err(Error::DimMismatch {
                expected: v.len(),
                got: len,
            }
            .into());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), out, len);
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn mlsd_cosine(a: *const f32, b: *const f32, len: usize, out: *mut f64) -> MlsdStatus {
    guard(|| {
        let v = cosine_similarity(slice_arg(a, len, "a")?, slice_arg(b, len, "b")?)?;
        write_out(out, v, "out")
    })
}

/// Euclidean distance of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn mlsd_euclidean(a: *const f32, b: *const f32, len: usize, out: *mut f64) -> MlsdStatus {
    guard(|| {
        let v = euclidean_distance(slice_arg(a, len, "a")?, slice_arg(b, len, "b")?)?;
        write_out(out, v, "out")
    })
}

/// Loads a metric checkpoint (its JSON manifest path) into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlsd_model_load(path: *const c_char, out: *mut *mut MlsdModel) -> MlsdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, _) = load_checkpoint(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(MlsdModel { inner: model })), "out")
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`mlsd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mlsd_model_free(model: *mut MlsdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlsd_model_input_dim(model: *const MlsdModel, out: *mut usize) -> MlsdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write_out(out, m.inner.input_dim(), "out")
    })
}

/// Probability that the embedding `x` belongs to the source target.
///
/// # Safety
/// `model` must be a live handle, `x` valid for `len` reads, `out` for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn mlsd_model_confidence(model: *const MlsdModel, x: *const f32, len: usize, out: *mut f64) -> MlsdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = m.inner.confidence(slice_arg(x, len, "x")?)?;
        write_out(out, c, "out")
    })
}

/// Macro-F1 of predicted against gold class indices (positions in the
/// scheme's label order), over the scheme's classes of interest. `scheme`
/// is an [`MlsdScheme`] value.
///
/// # Safety
/// `predictions` and `gold` must be valid for `len` reads, `out` for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn mlsd_macro_f1(
    scheme: u32,
    predictions: *const u32,
    gold: *const u32,
    len: usize,
    out: *mut f64,
) -> MlsdStatus {
    guard(|| {
        let scheme = match scheme {
            x if x == MlsdScheme::ThreeWay as u32 => Scheme::ThreeWay,
            x if x == MlsdScheme::FourWay as u32 => Scheme::FourWay,
            other => return Err(Fail(MlsdStatus::InvalidArgument, format!("unknown scheme code {other}"))),
        };
        let labels = |xs: &[u32]| {
            xs.iter()
                .map(|&i| {
                    scheme
                        .label(i as usize)
                        .ok_or_else(|| Fail(MlsdStatus::InvalidArgument, format!("class index {i} outside the scheme")))
                })
                .collect::<Result<Vec<_>, Fail>>()
        };
        let p = labels(slice_arg(predictions, len, "predictions")?)?;
        let g = labels(slice_arg(gold, len, "gold")?)?;
        let v = macro_f1(&p, &g, &scheme.classes_of_interest())?;
        write_out(out, v, "out")
    })
}

/// Two-sided paired t-test on `a[i] - b[i]`. `zero_variance` (may be null)
/// is set to 1 when the differences are constant.
///
/// # Safety
/// `a` and `b` must be valid for `len` reads; `t` and `p` for one write.
#[no_mangle]
pub unsafe extern "C" fn mlsd_paired_t_test(
    a: *const f64,
    b: *const f64,
    len: usize,
    t: *mut f64,
    p: *mut f64,
    zero_variance: *mut i32,
) -> MlsdStatus {
    guard(|| {
        let r = paired_t_test(slice_arg(a, len, "a")?, slice_arg(b, len, "b")?)?;
        if t.is_null() || p.is_null() {
            return Err(null("t or p"));
        }
        t.write(r.t);
        p.write(r.p);
        if !zero_variance.is_null() {
            zero_variance.write(r.zero_variance as i32);
        }
        Ok(())
    })
}
