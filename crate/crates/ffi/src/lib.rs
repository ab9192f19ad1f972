//! C ABI over `gaugepf`.
//!
//! Models are opaque `GpfModel` handles built from the JSON model format and
//! released with `gpf_model_free`. Every fallible call returns a `GpfStatus`;
//! on failure the message is kept per thread and read back with
//! `gpf_last_error_message`. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gaugepf::bp::{solve_bp, SolverConfig};
use gaugepf::format::{parse_model, serialize_model};
use gaugepf::loops::loop_series_sum;
use gaugepf::model::ENUMERATION_GUARD;
use gaugepf::{Error, MultiGM};

/// Opaque model handle.
pub struct GpfModel {
    inner: MultiGM,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    EnumerationGuard = 5,
    NotConverged = 6,
    BufferTooSmall = 7,
    Internal = 8,
    Panic = 9,
}

/// Solver settings; obtain defaults from `gpf_solver_options_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpfSolverOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub seed: u64,
    pub soften: f64,
}

impl From<&GpfSolverOptions> for SolverConfig {
    fn from(o: &GpfSolverOptions) -> Self {
        SolverConfig {
            damping: o.damping,
            tol: o.tol,
            max_sweeps: o.max_sweeps,
            restarts: o.restarts,
            seed: o.seed,
            soften: o.soften,
            ..SolverConfig::default()
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> GpfStatus {
    match e {
        Error::Parse(_) => GpfStatus::ParseError,
        Error::EnumerationGuard { .. } => GpfStatus::EnumerationGuard,
        Error::NotConverged { .. } | Error::GaugeNotConverged => GpfStatus::NotConverged,
        Error::Io(_) => GpfStatus::Internal,
        _ => GpfStatus::InvalidArgument,
    }
}

fn guarded(f: impl FnOnce() -> Result<(), GpfStatus>) -> GpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GpfStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside gaugepf");
            GpfStatus::Panic
        }
    }
}

fn fail(e: Error) -> GpfStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> GpfStatus {
    set_error(format!("{what} is null"));
    GpfStatus::NullPointer
}

unsafe fn model_ref<'a>(m: *const GpfModel) -> Result<&'a MultiGM, GpfStatus> {
    // SAFETY: caller passes a live handle from gpf_model_from_json or null
    unsafe { m.as_ref() }.map(|h| &h.inner).ok_or_else(|| null("model"))
}

unsafe fn options(o: *const GpfSolverOptions) -> SolverConfig {
    // SAFETY: caller passes a valid pointer or null
    unsafe { o.as_ref() }.map_or_else(SolverConfig::default, SolverConfig::from)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default solver settings.
#[no_mangle]
pub extern "C" fn gpf_solver_options_default() -> GpfSolverOptions {
    let c = SolverConfig::default();
    GpfSolverOptions {
        damping: c.damping,
        tol: c.tol,
        max_sweeps: c.max_sweeps,
        restarts: c.restarts,
        seed: c.seed,
        soften: c.soften,
    }
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns its full length in bytes. Returns 0
/// when there is no error. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gpf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: buf has len writable bytes and n < len
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Parses a JSON model. On success `*out` holds a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpf_model_from_json(json: *const c_char, out: *mut *mut GpfModel) -> GpfStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if json.is_null() {
            return Err(null("json"));
        }
        // SAFETY: json is NUL-terminated per contract
        let text = unsafe { CStr::from_ptr(json) }.to_str().map_err(|e| {
            set_error(format!("model text is not UTF-8: {e}"));
            GpfStatus::InvalidUtf8
        })?;
        let m = parse_model(text).map_err(fail)?;
        // SAFETY: out is writable per contract
        unsafe { *out = Box::into_raw(Box::new(GpfModel { inner: m })) };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpf_model_free(model: *mut GpfModel) {
    if !model.is_null() {
        // SAFETY: handle came from Box::into_raw
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Serialises the model; free the result with `gpf_string_free`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpf_model_to_json(model: *const GpfModel, out: *mut *mut c_char) -> GpfStatus {
    guarded(|| {
        let m = unsafe { model_ref(model) }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CString::new(serialize_model(m)).map_err(|e| fail(Error::Parse(e.to_string())))?;
        // SAFETY: out is writable
        unsafe { *out = s.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpf_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: s came from CString::into_raw
        drop(unsafe { CString::from_raw(s) });
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpf_model_num_edges(model: *const GpfModel, out: *mut usize) -> GpfStatus {
    guarded(|| {
        let m = unsafe { model_ref(model) }?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = m.num_edges() };
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpf_model_num_nodes(model: *const GpfModel, out: *mut usize) -> GpfStatus {
    guarded(|| {
        let m = unsafe { model_ref(model) }?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = m.graph().num_nodes() };
        Ok(())
    })
}

/// Exact `Z` by enumeration; refused above `guard` edges (0 means the default guard).
///
/// # Safety
/// `model` must be a live handle; `z_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpf_partition_exact(model: *const GpfModel, guard: usize, z_out: *mut f64) -> GpfStatus {
    guarded(|| {
        let m = unsafe { model_ref(model) }?;
        if z_out.is_null() {
            return Err(null("z_out"));
        }
        let guard = if guard == 0 { ENUMERATION_GUARD } else { guard };
        let z = m.partition_exact_with_guard(guard).map_err(fail)?;
        unsafe { *z_out = z };
        Ok(())
    })
}

/// Maximal BP gauge. Writes `Z_vbp` to `z_out` and, when `gauge_out` is not
/// null, the gauge as `(x+, x-)` pairs in edge order; `gauge_len` must then be
/// at least twice the edge count. `opts` may be null for defaults.
///
/// # Safety
/// `model` must be a live handle; `z_out` writable; `gauge_out` null or
/// pointing to `gauge_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gpf_bp_solve(
    model: *const GpfModel,
    opts: *const GpfSolverOptions,
    z_out: *mut f64,
    gauge_out: *mut f64,
    gauge_len: usize,
) -> GpfStatus {
    guarded(|| {
        let m = unsafe { model_ref(model) }?;
        if z_out.is_null() {
            return Err(null("z_out"));
        }
        let need = 2 * m.num_edges();
        if !gauge_out.is_null() && gauge_len < need {
            set_error(format!("gauge buffer holds {gauge_len} values, need {need}"));
            return Err(GpfStatus::BufferTooSmall);
        }
        let cfg = unsafe { options(opts) };
        let sol = solve_bp(m, &cfg).map_err(fail)?;
        unsafe { *z_out = sol.best.z };
        if !gauge_out.is_null() {
            let vals = sol.best.x.values();
            // SAFETY: gauge_out holds at least need doubles
            unsafe { ptr::copy_nonoverlapping(vals.as_ptr(), gauge_out, need) };
        }
        Ok(())
    })
}

/// Loop series at the maximal BP gauge: the sum and the number of generalized loops.
///
/// # Safety
/// `model` must be a live handle; `sum_out` and `count_out` writable; `opts` null or valid.
#[no_mangle]
pub unsafe extern "C" fn gpf_loop_series(
    model: *const GpfModel,
    opts: *const GpfSolverOptions,
    sum_out: *mut f64,
    count_out: *mut usize,
) -> GpfStatus {
    guarded(|| {
        let m = unsafe { model_ref(model) }?;
        if sum_out.is_null() || count_out.is_null() {
            return Err(null("output pointer"));
        }
        let cfg = unsafe { options(opts) };
        let sol = solve_bp(m, &cfg).map_err(fail)?;
        let ls = loop_series_sum(&sol.model, &sol.best.x).map_err(fail)?;
        unsafe {
            *sum_out = ls.sum;
            *count_out = ls.terms.len();
        }
        Ok(())
    })
}
