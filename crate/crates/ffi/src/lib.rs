//! C interface to `edspec`.
//!
//! Systems and spectra cross the boundary as opaque handles owned by the
//! caller and released with the matching `*_free` function. Every fallible
//! call returns an [`EdspecStatus`]; on failure the message is kept per
//! thread and read back with [`edspec_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use edspec::dichotomy::{DichotomyAnalysis, Verdict};
use edspec::integrate::SolverOptions;
use edspec::io::parse_system;
use edspec::spectrum::{sacker_sell, sacker_sell_fundamental, SpectrumEstimate, SpectrumOptions};
use edspec::systems::{builtin, Params, System};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdspecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Unknown builtin, bad parameter, malformed JSON or expression.
    Input = 3,
    /// Integration or estimation failed.
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdspecVerdict {
    Certified = 0,
    Refuted = 1,
    Inconclusive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdspecSystemKind {
    Linear = 0,
    Nonlinear = 1,
    /// Closed-form fundamental matrix.
    Fundamental = 2,
}

/// Opaque system handle.
pub struct EdspecSystem(System);

/// Opaque spectrum estimate handle.
pub struct EdspecSpectrum(SpectrumEstimate);

/// Numerical settings shared by the spectrum and dichotomy calls.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EdspecOptions {
    pub horizon: f64,
    /// Steklov window.
    pub window: f64,
    /// Spacing of the gamma grid.
    pub resolution: f64,
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

/// Outcome of a dichotomy test at one shift.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EdspecDichotomy {
    pub verdict: EdspecVerdict,
    /// Rank of the projector (dimension of the stable subspace).
    pub rank: usize,
    pub k: f64,
    pub alpha: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EdspecStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(EdspecStatus::NullPointer, format!("`{what}` is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(EdspecStatus::InvalidArgument, msg.into())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EdspecStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EdspecStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            EdspecStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure(EdspecStatus::Input, e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    Failure(EdspecStatus::Numerical, e.to_string())
}

fn spectrum_options(opts: Option<&EdspecOptions>) -> Result<SpectrumOptions, Failure> {
    let Some(o) = opts else {
        return Ok(SpectrumOptions::default());
    };
    for (name, v) in [
        ("horizon", o.horizon),
        ("window", o.window),
        ("resolution", o.resolution),
        ("step", o.step),
        ("rtol", o.rtol),
        ("atol", o.atol),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::invalid(format!(
                "option `{name}` must be positive and finite, got {v}"
            )));
        }
    }
    Ok(SpectrumOptions {
        horizon: o.horizon,
        window: o.window,
        resolution: o.resolution,
        step: o.step,
        solver: SolverOptions {
            rtol: o.rtol,
            atol: o.atol,
            ..SolverOptions::default()
        },
        ..SpectrumOptions::default()
    })
}

fn store<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null before building `value`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn edspec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default numerical settings.
#[no_mangle]
pub extern "C" fn edspec_options_default() -> EdspecOptions {
    let s = SpectrumOptions::default();
    EdspecOptions {
        horizon: s.horizon,
        window: s.window,
        resolution: s.resolution,
        step: s.step,
        rtol: s.solver.rtol,
        atol: s.solver.atol,
    }
}

/// Length in bytes (without the terminating NUL) of the last error message
/// on this thread, or 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn edspec_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `len - 1` bytes). Returns the full message length, or -1 if `buf` is null
/// while `len > 0`.
///
/// # Safety
/// `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn edspec_last_error_message(buf: *mut c_char, len: usize) -> isize {
    if buf.is_null() && len > 0 {
        return -1;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        if len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() as isize
    })
}

/// Builds a registry system. `names` and `values` hold `count` parameter
/// assignments; both may be null when `count` is 0.
///
/// # Safety
/// `name` must be a NUL-terminated string, `names`/`values` must point to
/// `count` entries, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn edspec_system_builtin(
    name: *const c_char,
    names: *const *const c_char,
    values: *const f64,
    count: usize,
    out: *mut *mut EdspecSystem,
) -> EdspecStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let name = text(name, "name")?;
        let mut params = Params::new();
        if count > 0 {
            if names.is_null() || values.is_null() {
                return Err(Failure::null("names/values"));
            }
            for i in 0..count {
                let key = text(*names.add(i), "parameter name")?;
                params.insert(key.to_string(), *values.add(i));
            }
        }
        let sys = builtin(name, &params).map_err(input)?;
        store(out, EdspecSystem(sys));
        Ok(())
    })
}

/// Parses a system from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edspec_system_from_json(
    json: *const c_char,
    out: *mut *mut EdspecSystem,
) -> EdspecStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let sys = parse_system(text(json, "json")?).map_err(input)?;
        store(out, EdspecSystem(sys));
        Ok(())
    })
}

/// Releases a system. Null is ignored.
///
/// # Safety
/// `sys` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn edspec_system_free(sys: *mut EdspecSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn edspec_system_dim(sys: *const EdspecSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.dim())
}

/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edspec_system_kind(
    sys: *const EdspecSystem,
    out: *mut EdspecSystemKind,
) -> EdspecStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = match sys.0 {
            System::Linear(_) => EdspecSystemKind::Linear,
            System::Nonlinear(_) => EdspecSystemKind::Nonlinear,
            System::Fundamental { .. } => EdspecSystemKind::Fundamental,
        };
        Ok(())
    })
}

/// Evaluates the vector field at `(t, x)`; `x` and `out` hold `n` entries.
/// Linear systems evaluate `A(t) x`.
///
/// # Safety
/// `x` must be readable and `out` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn edspec_system_eval(
    sys: *const EdspecSystem,
    t: f64,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> EdspecStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        if x.is_null() || out.is_null() {
            return Err(Failure::null("x/out"));
        }
        if n != sys.0.dim() {
            return Err(Failure::invalid(format!(
                "state has {n} entries, the system has dimension {}",
                sys.0.dim()
            )));
        }
        let x = std::slice::from_raw_parts(x, n);
        let out = std::slice::from_raw_parts_mut(out, n);
        match &sys.0 {
            System::Nonlinear(f) => f.eval_rhs(t, x, out).map_err(numerical),
            System::Linear(l) => {
                let a = l.a.eval(t).map_err(numerical)?;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..n).map(|j| a[(i, j)] * x[j]).sum();
                }
                Ok(())
            }
            System::Fundamental { .. } => Err(Failure::invalid(
                "a closed-form fundamental matrix has no vector field",
            )),
        }
    })
}

/// Estimates the dichotomy spectrum. `opts` may be null for defaults.
///
/// # Safety
/// `sys` must be a live handle, `opts` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edspec_spectrum(
    sys: *const EdspecSystem,
    opts: *const EdspecOptions,
    out: *mut *mut EdspecSpectrum,
) -> EdspecStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let opts = spectrum_options(opts.as_ref())?;
        let est = match &sys.0 {
            System::Linear(l) => sacker_sell(l, &opts).map_err(numerical)?,
            System::Fundamental { phi, .. } => {
                sacker_sell_fundamental(phi, &opts).map_err(numerical)?
            }
            System::Nonlinear(_) => {
                return Err(Failure::invalid(
                    "the spectrum needs a linear system or a fundamental matrix",
                ))
            }
        };
        store(out, EdspecSpectrum(est));
        Ok(())
    })
}

/// Number of spectral intervals, or 0 for a null handle.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn edspec_spectrum_count(spec: *const EdspecSpectrum) -> usize {
    spec.as_ref().map_or(0, |s| s.0.intervals.len())
}

/// Endpoints of interval `index`, in ascending order of intervals.
///
/// # Safety
/// `spec` must be a live handle; `lo` and `hi` writable.
#[no_mangle]
pub unsafe extern "C" fn edspec_spectrum_interval(
    spec: *const EdspecSpectrum,
    index: usize,
    lo: *mut f64,
    hi: *mut f64,
) -> EdspecStatus {
    guard(|| {
        let spec = handle(spec, "spec")?;
        if lo.is_null() || hi.is_null() {
            return Err(Failure::null("lo/hi"));
        }
        let [a, b] = *spec.0.intervals.get(index).ok_or_else(|| {
            Failure::invalid(format!(
                "interval {index} out of range ({} intervals)",
                spec.0.intervals.len()
            ))
        })?;
        *lo = a;
        *hi = b;
        Ok(())
    })
}

/// Releases a spectrum. Null is ignored.
///
/// # Safety
/// `spec` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn edspec_spectrum_free(spec: *mut EdspecSpectrum) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Tests for an exponential dichotomy of `x' = (A(t) - gamma I) x`.
///
/// # Safety
/// `sys` must be a live handle, `opts` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn edspec_dichotomy(
    sys: *const EdspecSystem,
    gamma: f64,
    opts: *const EdspecOptions,
    out: *mut EdspecDichotomy,
) -> EdspecStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        if !gamma.is_finite() {
            return Err(Failure::invalid(format!(
                "gamma must be finite, got {gamma}"
            )));
        }
        let opts = spectrum_options(opts.as_ref())?.dichotomy();
        let analysis = match &sys.0 {
            System::Linear(l) => DichotomyAnalysis::new(l, &opts),
            System::Fundamental { phi, .. } => DichotomyAnalysis::from_fundamental(phi, &opts),
            System::Nonlinear(_) => {
                return Err(Failure::invalid("dichotomies need a linear system"));
            }
        }
        .map_err(numerical)?;
        let c = analysis.has_dichotomy(gamma);
        *out = EdspecDichotomy {
            verdict: match c.verdict {
                Verdict::Certified => EdspecVerdict::Certified,
                Verdict::Refuted => EdspecVerdict::Refuted,
                Verdict::Inconclusive => EdspecVerdict::Inconclusive,
            },
            rank: c.rank,
            k: c.k,
            alpha: c.alpha,
        };
        Ok(())
    })
}
