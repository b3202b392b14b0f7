//! C ABI for the inventropy toolkit.
//!
//! Objects cross the boundary as opaque handles created by `inv_*_new` /
//! `inv_*_from_config` and released with the matching `inv_*_free`.
//! Every fallible call returns an [`InvStatus`]; on failure the message is
//! available from [`inv_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use inventropy::cocycle::{alpha, det_cocycle, exterior_norm};
use inventropy::config::Config;
use inventropy::entropy::{formula_report, lower_bound_search, upper_bound_search, SearchOptions};
use inventropy::flow::{integrate_from, FlowOptions};
use inventropy::splitting::EstimatedSplitting;
use inventropy::system::{BoxSet, ControlSignal, SystemSpec};
use inventropy::Error;
use nalgebra::DMatrix;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// A control-affine system.
pub struct InvSystem {
    inner: SystemSpec,
}

/// A piecewise-constant control signal.
pub struct InvControl {
    inner: ControlSignal,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> InvStatus {
    match e {
        Error::Config(_) | Error::Syntax { .. } | Error::UnknownIdentifier { .. } | Error::VariableOutOfRange { .. } => {
            InvStatus::Config
        }
        Error::Io(_) | Error::Json(_) => InvStatus::Io,
        Error::Admissibility(_) => InvStatus::InvalidArgument,
        e if e.is_numerical() => InvStatus::Numerical,
        _ => InvStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (InvStatus, String)>) -> InvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            InvStatus::Panic
        }
    }
}

fn lib<T>(r: inventropy::Result<T>) -> Result<T, (InvStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (InvStatus, String) {
    (InvStatus::NullPointer, "null pointer argument".into())
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, (InvStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| (InvStatus::InvalidUtf8, "string is not UTF-8".into()))
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], (InvStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn system<'a>(p: *const InvSystem) -> Result<&'a SystemSpec, (InvStatus, String)> {
    p.as_ref().map(|s| &s.inner).ok_or_else(null)
}

unsafe fn control<'a>(p: *const InvControl) -> Result<&'a ControlSignal, (InvStatus, String)> {
    p.as_ref().map(|c| &c.inner).ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), (InvStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn inv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn inv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a system from `key = value` text (`dim`, `inputs`,
/// `field.<i>.<j>`, `u.lo`, `u.hi`).
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn inv_system_from_config(config: *const c_char, out: *mut *mut InvSystem) -> InvStatus {
    guard(|| {
        let cfg = lib(Config::parse(text(config)?))?;
        let spec = lib(SystemSpec::from_config(&cfg))?;
        write(out, Box::into_raw(Box::new(InvSystem { inner: spec })))
    })
}

/// # Safety
/// `sys` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn inv_system_free(sys: *mut InvSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State dimension, 0 for NULL.
///
/// # Safety
/// `sys` must be a handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn inv_system_dim(sys: *const InvSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.dim())
}

/// Number of inputs, 0 for NULL.
///
/// # Safety
/// `sys` must be a handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn inv_system_inputs(sys: *const InvSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.inputs())
}

/// Control with `steps` values of `inputs(sys)` numbers each (row-major),
/// step length `step`, repeated periodically when `periodic` is nonzero.
///
/// # Safety
/// `values` must hold `steps * inputs(sys)` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_control_new(
    sys: *const InvSystem,
    step: f64,
    values: *const f64,
    steps: usize,
    periodic: i32,
    out: *mut *mut InvControl,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let m = spec.inputs();
        let u = if m == 0 {
            ControlSignal::autonomous(step)
        } else {
            if steps == 0 {
                return Err((InvStatus::InvalidArgument, "control needs at least one step".into()));
            }
            let vals: Vec<Vec<f64>> = slice(values, steps * m)?.chunks(m).map(<[f64]>::to_vec).collect();
            lib(if periodic != 0 {
                ControlSignal::periodic(step, vals, spec.control_box())
            } else {
                ControlSignal::finite(step, vals, spec.control_box())
            })?
        };
        write(out, Box::into_raw(Box::new(InvControl { inner: u })))
    })
}

/// # Safety
/// `u` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn inv_control_free(u: *mut InvControl) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Writes `phi(tau, x0, u)` (`dim(sys)` doubles) to `x_out`.
///
/// # Safety
/// `x0` and `x_out` must hold `dim(sys)` doubles.
#[no_mangle]
pub unsafe extern "C" fn inv_integrate(
    sys: *const InvSystem,
    u: *const InvControl,
    x0: *const f64,
    tau: f64,
    x_out: *mut f64,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let d = spec.dim();
        let seg = lib(integrate_from(spec, 0.0, slice(x0, d)?, control(u)?, tau, false, &FlowOptions::default()))?;
        if x_out.is_null() {
            return Err(null());
        }
        std::slice::from_raw_parts_mut(x_out, d).copy_from_slice(seg.final_state().as_slice());
        Ok(())
    })
}

/// Exterior-power cocycle `alpha_tau(u, x0)`.
///
/// # Safety
/// `x0` must hold `dim(sys)` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_alpha(
    sys: *const InvSystem,
    u: *const InvControl,
    x0: *const f64,
    tau: f64,
    out: *mut f64,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let tr = lib(alpha(spec, control(u)?, slice(x0, spec.dim())?, tau, &FlowOptions::default()))?;
        write(out, tr.final_value())
    })
}

/// `log |det Phi(tau)|` on the full tangent space.
///
/// # Safety
/// `x0` must hold `dim(sys)` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_log_det(
    sys: *const InvSystem,
    u: *const InvControl,
    x0: *const f64,
    tau: f64,
    out: *mut f64,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let tr = lib(det_cocycle(spec, control(u)?, slice(x0, spec.dim())?, tau, None, &FlowOptions::default()))?;
        write(out, tr.final_value())
    })
}

/// `max_j sigma_1 ... sigma_j` of a row-major `d x d` matrix and the maximizing `j`.
///
/// # Safety
/// `m` must hold `d * d` doubles; `norm_out` and `j_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_exterior_norm(m: *const f64, d: usize, norm_out: *mut f64, j_out: *mut usize) -> InvStatus {
    guard(|| {
        if d == 0 {
            return Err((InvStatus::InvalidArgument, "matrix dimension must be positive".into()));
        }
        let mat = DMatrix::from_row_slice(d, d, slice(m, d * d)?);
        let (n, j) = lib(exterior_norm(&mat))?;
        write(norm_out, n)?;
        write(j_out, j)
    })
}

unsafe fn region(spec: &SystemSpec, lo: *const f64, hi: *const f64) -> Result<BoxSet, (InvStatus, String)> {
    let d = spec.dim();
    lib(BoxSet::new(slice(lo, d)?.to_vec(), slice(hi, d)?.to_vec()))
}

/// Upper-route estimate (exterior cocycle over periodic witnesses) on the
/// box `[q_lo, q_hi]` with default search settings and the given seed.
///
/// # Safety
/// `q_lo`, `q_hi` must hold `dim(sys)` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_upper_bound(
    sys: *const InvSystem,
    q_lo: *const f64,
    q_hi: *const f64,
    seed: u64,
    out: *mut f64,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let q = region(spec, q_lo, q_hi)?;
        let opts = SearchOptions { seed, ..Default::default() };
        write(out, lib(upper_bound_search(spec, &q, &opts))?.value)
    })
}

/// Lower-route estimate (unstable determinant on verified hyperbolic
/// periodic witnesses) on `[q_lo, q_hi]`.
///
/// # Safety
/// `q_lo`, `q_hi` must hold `dim(sys)` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_lower_bound(
    sys: *const InvSystem,
    q_lo: *const f64,
    q_hi: *const f64,
    seed: u64,
    out: *mut f64,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let q = region(spec, q_lo, q_hi)?;
        let opts = SearchOptions { seed, ..Default::default() };
        write(out, lib(lower_bound_search(spec, &q, &EstimatedSplitting::default(), &opts))?.value)
    })
}

/// Upper and lower routes as a JSON report. Release the string with
/// [`inv_string_free`].
///
/// # Safety
/// `q_lo`, `q_hi` must hold `dim(sys)` doubles and `json_out` be valid.
#[no_mangle]
pub unsafe extern "C" fn inv_entropy_report_json(
    sys: *const InvSystem,
    q_lo: *const f64,
    q_hi: *const f64,
    seed: u64,
    json_out: *mut *mut c_char,
) -> InvStatus {
    guard(|| {
        let spec = system(sys)?;
        let q = region(spec, q_lo, q_hi)?;
        let opts = SearchOptions { seed, ..Default::default() };
        let rep = formula_report(spec, &q, &EstimatedSplitting::default(), &opts, None);
        let s = serde_json::to_string(&rep).map_err(|e| (InvStatus::Io, e.to_string()))?;
        let c = CString::new(s).map_err(|e| (InvStatus::Io, e.to_string()))?;
        write(json_out, c.into_raw())
    })
}

/// # Safety
/// `s` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn inv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
