//! C interface to `hawkes_stein`.
//!
//! Objects are opaque heap handles released by their `*_free` function.
//! Every fallible call returns an [`HsStatus`]; on failure the message is
//! available from [`hs_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hawkes_stein::driving_measure::Configuration;
use hawkes_stein::functionals;
use hawkes_stein::model::ModelSpec;
use hawkes_stein::simulate::{self, EventPath};
use hawkes_stein::volterra::{self, ResolventGrid};
use hawkes_stein::wasserstein::{self, RatePoint};
use hawkes_stein::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    ModelViolation = 4,
    Inadmissible = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Which normalized functional to evaluate on a path.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsFunctional {
    /// (H_T − ∫λ)/√T
    Standard = 0,
    /// Σ(Tλ(t_i))^{-1/2} − T^{-1/2}∫√λ
    Reduced = 1,
}

pub struct HsModel {
    spec: ModelSpec,
}

pub struct HsPath {
    path: EventPath,
}

pub struct HsResolvent {
    grid: ResolventGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HsStatus {
    match err {
        Error::InvalidArgument(_) | Error::GridMismatch(_) => HsStatus::InvalidArgument,
        Error::Config(_) => HsStatus::Config,
        Error::ModelViolation(_) | Error::Unstable { .. } | Error::MissingMarkCeiling => HsStatus::ModelViolation,
        Error::Inadmissible(_) | Error::NonPositiveIntensity { .. } => HsStatus::Inadmissible,
        _ => HsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), HsFail>) -> HsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HsStatus::Ok,
        Ok(Err(HsFail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HsStatus::Panic
        }
    }
}

struct HsFail(HsStatus, String);

impl From<Error> for HsFail {
    fn from(e: Error) -> Self {
        HsFail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> HsFail {
    HsFail(HsStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, HsFail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), HsFail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model table from TOML text. The model is not validated.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_model_from_toml(toml: *const c_char, out: *mut *mut HsModel) -> HsStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text =
            CStr::from_ptr(toml).to_str().map_err(|e| HsFail(HsStatus::InvalidArgument, format!("toml is not UTF-8: {e}")))?;
        let spec = ModelSpec::from_toml(text)?;
        write_out(out, Box::into_raw(Box::new(HsModel { spec })), "out")
    })
}

/// # Safety
/// `model` must be NULL or a handle from `hs_model_from_toml` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_model_free(model: *mut HsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Checks every admissibility condition; the message lists all violations.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_model_validate(model: *const HsModel) -> HsStatus {
    guard(|| Ok(as_ref(model, "model")?.spec.ensure_valid()?))
}

/// Simulates the model on [0, horizon) from the Poisson configuration of `seed`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_simulate(model: *const HsModel, seed: u64, horizon: f64, out: *mut *mut HsPath) -> HsStatus {
    guard(|| {
        let spec = &as_ref(model, "model")?.spec;
        if matches!(spec, ModelSpec::Discrete(_)) {
            return Err(HsFail(HsStatus::InvalidArgument, "discrete models have no event path".into()));
        }
        if horizon.is_nan() || horizon <= 0.0 {
            return Err(HsFail(HsStatus::InvalidArgument, format!("horizon must be positive, got {horizon}")));
        }
        let path = simulate::simulate(spec, &Configuration::from_seed(seed), horizon)?;
        write_out(out, Box::into_raw(Box::new(HsPath { path })), "out")
    })
}

/// # Safety
/// `path` must be NULL or a handle from `hs_simulate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_path_free(path: *mut HsPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of events in [0, horizon); 0 for a NULL handle.
///
/// # Safety
/// `path` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_path_len(path: *const HsPath) -> usize {
    path.as_ref().map_or(0, |p| p.path.count())
}

/// Copies event times and marks in [0, horizon) into caller buffers of
/// length `cap`. `written` receives the event count; if it exceeds `cap`
/// nothing is copied and BufferTooSmall is returned. `theta` may be NULL.
///
/// # Safety
/// `t` (and `theta` when non-NULL) must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_path_events(
    path: *const HsPath,
    t: *mut f64,
    theta: *mut f64,
    cap: usize,
    written: *mut usize,
) -> HsStatus {
    guard(|| {
        let p = &as_ref(path, "path")?.path;
        let events = &p.events()[p.first_at_or_after(0.0)..];
        write_out(written, events.len(), "written")?;
        if events.len() > cap {
            return Err(HsFail(HsStatus::BufferTooSmall, format!("{} events, buffer holds {cap}", events.len())));
        }
        if events.is_empty() {
            return Ok(());
        }
        if t.is_null() {
            return Err(null("t"));
        }
        let ts = slice::from_raw_parts_mut(t, events.len());
        for (dst, a) in ts.iter_mut().zip(events) {
            *dst = a.t;
        }
        if !theta.is_null() {
            let th = slice::from_raw_parts_mut(theta, events.len());
            for (dst, a) in th.iter_mut().zip(events) {
                *dst = a.theta;
            }
        }
        Ok(())
    })
}

/// Intensity λ(t) of the path (left limit at event times).
///
/// # Safety
/// `path` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_path_intensity(path: *const HsPath, t: f64, out: *mut f64) -> HsStatus {
    guard(|| {
        let p = &as_ref(path, "path")?.path;
        write_out(out, p.evaluator().intensity(t), "out")
    })
}

/// ∫₀ᵀ λ(s) ds.
///
/// # Safety
/// `path` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_path_compensator(path: *const HsPath, out: *mut f64) -> HsStatus {
    guard(|| {
        let p = &as_ref(path, "path")?.path;
        write_out(out, simulate::compensator(p)?, "out")
    })
}

/// # Safety
/// `path` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_path_functional(path: *const HsPath, kind: HsFunctional, out: *mut f64) -> HsStatus {
    guard(|| {
        let p = &as_ref(path, "path")?.path;
        let v = match kind {
            HsFunctional::Standard => functionals::functional_standard(p)?,
            HsFunctional::Reduced => functionals::functional_reduced(p)?,
        };
        write_out(out, v, "out")
    })
}

/// Resolvent Σ_{k≥1} αᵏ|φ|^{∗k} of the model kernel on [0, horizon] with step `dt`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_resolvent(
    model: *const HsModel,
    alpha: f64,
    horizon: f64,
    dt: f64,
    out: *mut *mut HsResolvent,
) -> HsStatus {
    guard(|| {
        let spec = &as_ref(model, "model")?.spec;
        let kernel = spec
            .kernel()
            .ok_or_else(|| HsFail(HsStatus::InvalidArgument, format!("the {} model has no continuous kernel", spec.variant())))?;
        let grid = volterra::resolvent(kernel, alpha, horizon, dt)?;
        write_out(out, Box::into_raw(Box::new(HsResolvent { grid })), "out")
    })
}

/// # Safety
/// `r` must be NULL or a handle from `hs_resolvent` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_resolvent_free(r: *mut HsResolvent) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of grid points (values at t = k·dt, k = 0..len).
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_resolvent_len(r: *const HsResolvent) -> usize {
    r.as_ref().map_or(0, |r| r.grid.base.len())
}

/// Copies the grid values; same buffer protocol as `hs_path_events`.
///
/// # Safety
/// `values` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_resolvent_values(
    r: *const HsResolvent,
    values: *mut f64,
    cap: usize,
    written: *mut usize,
) -> HsStatus {
    guard(|| {
        let v = as_ref(r, "resolvent")?.grid.base.values();
        write_out(written, v.len(), "written")?;
        if v.len() > cap {
            return Err(HsFail(HsStatus::BufferTooSmall, format!("{} values, buffer holds {cap}", v.len())));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        slice::from_raw_parts_mut(values, v.len()).copy_from_slice(v);
        Ok(())
    })
}

/// Bound on the resolvent mass beyond the grid horizon.
///
/// # Safety
/// `r` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_resolvent_tail_bound(r: *const HsResolvent, out: *mut f64) -> HsStatus {
    guard(|| write_out(out, as_ref(r, "resolvent")?.grid.l1_tail_bound, "out"))
}

/// Exact W₁ between the empirical law of `sample` and N(0, sigma2).
///
/// # Safety
/// `sample` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_w1_to_gaussian(sample: *const f64, n: usize, sigma2: f64, out: *mut f64) -> HsStatus {
    guard(|| {
        if sample.is_null() {
            return Err(null("sample"));
        }
        let xs = slice::from_raw_parts(sample, n);
        write_out(out, wasserstein::w1_to_gaussian(xs, sigma2)?, "out")
    })
}

/// Weighted log–log fit of `estimate ≈ C·horizon^slope`.
///
/// # Safety
/// The three input arrays must hold `n` readable doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_fit_rate(
    horizons: *const f64,
    estimates: *const f64,
    se: *const f64,
    n: usize,
    slope: *mut f64,
    slope_se: *mut f64,
    intercept: *mut f64,
) -> HsStatus {
    guard(|| {
        if horizons.is_null() || estimates.is_null() || se.is_null() {
            return Err(null("input array"));
        }
        let (h, d, s) = (slice::from_raw_parts(horizons, n), slice::from_raw_parts(estimates, n), slice::from_raw_parts(se, n));
        let points: Vec<RatePoint> = (0..n).map(|i| RatePoint { horizon: h[i], estimate: d[i], se: s[i] }).collect();
        let fit = wasserstein::fit_rate(&points)?;
        write_out(slope, fit.slope, "slope")?;
        write_out(slope_se, fit.slope_se, "slope_se")?;
        write_out(intercept, fit.intercept, "intercept")
    })
}
