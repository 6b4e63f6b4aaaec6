//! C ABI for pulsefront.
//!
//! Media are opaque handles created by [`pf_medium_from_toml`] and released by
//! [`pf_medium_free`]. Every call returns a [`PfStatus`]; on failure the
//! message is available from [`pf_last_error_message`] on the same thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pulsefront::dispersion::{decay_roots, minimal_speed, Dispersion, ZeroOrderTag, EIGEN_TOL};
use pulsefront::equilibrium::{compute_equilibrium, DEFAULT_MAX_PERIODS, DEFAULT_TOL};
use pulsefront::floquet::{principal_eigenpair, TwistedOperator, DEFAULT_MAX_ITERS};
use pulsefront::front::{monotone_iteration, profile_diagnostics, FrontContext, FrontOptions, FrontPath};
use pulsefront::medium::{evaluate_eta, Medium, MediumSpec, ScalarField};
use pulsefront::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Invalid configuration or argument.
    Config = 3,
    /// A stated precondition does not hold.
    Precondition = 4,
    /// Out of the admissible domain (e.g. subcritical speed).
    Domain = 5,
    /// Iteration failure, loss of positivity or non-convergence.
    Numerical = 6,
    /// Caller buffer too small.
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque medium handle.
pub struct PfMedium {
    inner: Medium,
}

/// Zero-order term of the linearization.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfZeroOrder {
    Mu = 0,
    Eta = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfFrontPath {
    Kpp = 0,
    General = 1,
}

/// Summary of a front computation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfFrontReport {
    pub iters: usize,
    pub outer_defect: f64,
    pub monotone_defect: f64,
    pub sandwich_defect: f64,
    pub tail_slope: f64,
    pub lam: f64,
    pub right_limit_error: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PfStatus {
    match e {
        Error::Config(_) | Error::Ellipticity { .. } => PfStatus::Config,
        Error::Precondition(_) => PfStatus::Precondition,
        Error::Domain(_) => PfStatus::Domain,
        _ => PfStatus::Numerical,
    }
}

/// Runs `f`, recording errors and panics.
fn guard(f: impl FnOnce() -> Result<(), (PfStatus, String)>) -> PfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            PfStatus::Panic
        }
    }
}

fn lib<T>(r: pulsefront::Result<T>) -> Result<T, (PfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (PfStatus, String) {
    (PfStatus::NullPointer, format!("{name} is null"))
}

unsafe fn medium_ref<'a>(m: *const PfMedium) -> Result<&'a Medium, (PfStatus, String)> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("medium"))
}

fn zero_order(m: &Medium, z: PfZeroOrder) -> pulsefront::Result<(ScalarField, ZeroOrderTag)> {
    match z {
        PfZeroOrder::Mu => Ok((m.coeffs.mu.clone(), ZeroOrderTag::Mu)),
        PfZeroOrder::Eta => {
            let p = compute_equilibrium(&m.coeffs, &m.nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS)?.p;
            Ok((evaluate_eta(&m.nl, &p, &m.grid, 256)?, ZeroOrderTag::Eta))
        }
    }
}

/// Parses a TOML medium description into a new handle stored in `*out`.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_medium_from_toml(toml: *const c_char, out: *mut *mut PfMedium) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|e| (PfStatus::InvalidUtf8, e.to_string()))?;
        let spec = lib(MediumSpec::from_toml_str(text))?;
        let inner = lib(Medium::from_spec(&spec))?;
        *out = Box::into_raw(Box::new(PfMedium { inner }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `m` must come from [`pf_medium_from_toml`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pf_medium_free(m: *mut PfMedium) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Torus node counts of the medium.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_medium_grid(m: *const PfMedium, nt: *mut usize, nx: *mut usize) -> PfStatus {
    guard(|| {
        let m = medium_ref(m)?;
        if nt.is_null() || nx.is_null() {
            return Err(null("output"));
        }
        *nt = m.grid.nt;
        *nx = m.grid.nx;
        Ok(())
    })
}

/// Principal eigenvalue `k` of the operator twisted by `lambda` in the
/// medium's direction.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_eigen(m: *const PfMedium, lambda: f64, z: PfZeroOrder, k: *mut f64) -> PfStatus {
    guard(|| {
        let m = medium_ref(m)?;
        if k.is_null() {
            return Err(null("k"));
        }
        let (field, _) = lib(zero_order(m, z))?;
        let op = lib(TwistedOperator::new(&m.coeffs, &field, lambda, m.direction))?;
        *k = lib(principal_eigenpair(&op, EIGEN_TOL, DEFAULT_MAX_ITERS))?.k;
        Ok(())
    })
}

/// Minimal speed `c*` and its minimizer.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_minimal_speed(
    m: *const PfMedium,
    z: PfZeroOrder,
    eps: f64,
    c_star: *mut f64,
    lambda_star: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = medium_ref(m)?;
        if c_star.is_null() || lambda_star.is_null() {
            return Err(null("output"));
        }
        let (field, tag) = lib(zero_order(m, z))?;
        let r = lib(minimal_speed(&Dispersion::new(&m.coeffs, &field, m.direction), tag, eps))?;
        *c_star = r.c_star;
        *lambda_star = r.lambda_star;
        Ok(())
    })
}

/// Decay exponents `lam <= Lam` at speed `c`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_decay_roots(
    m: *const PfMedium,
    z: PfZeroOrder,
    eps: f64,
    c: f64,
    lam: *mut f64,
    big_lam: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = medium_ref(m)?;
        if lam.is_null() || big_lam.is_null() {
            return Err(null("output"));
        }
        let (field, tag) = lib(zero_order(m, z))?;
        let r = lib(decay_roots(&Dispersion::new(&m.coeffs, &field, m.direction), tag, eps, c))?;
        *lam = r.lam;
        *big_lam = r.big_lam;
        Ok(())
    })
}

/// Periodic state `p` written t-major into `values` (`len >= nt * nx`).
///
/// # Safety
/// `values` must hold `len` doubles; `residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn pf_equilibrium(
    m: *const PfMedium,
    values: *mut f64,
    len: usize,
    residual: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = medium_ref(m)?;
        if values.is_null() {
            return Err(null("values"));
        }
        let need = m.grid.nt * m.grid.nx;
        if len < need {
            return Err((PfStatus::BufferTooSmall, format!("buffer holds {len} values, need {need}")));
        }
        let st = lib(compute_equilibrium(&m.coeffs, &m.nl, DEFAULT_TOL, DEFAULT_MAX_PERIODS))?;
        std::slice::from_raw_parts_mut(values, need).copy_from_slice(&st.p.values);
        if !residual.is_null() {
            *residual = st.residual;
        }
        Ok(())
    })
}

/// Front profile on the cylinder of half-length `a`; fills `report`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_front(
    m: *const PfMedium,
    c: f64,
    eps: f64,
    a: f64,
    path: PfFrontPath,
    report: *mut PfFrontReport,
) -> PfStatus {
    guard(|| {
        let m = medium_ref(m)?;
        if report.is_null() {
            return Err(null("report"));
        }
        let path = match path {
            PfFrontPath::Kpp => FrontPath::Kpp,
            PfFrontPath::General => FrontPath::General,
        };
        let ctx = lib(FrontContext::from_medium(m))?;
        let prof = lib(monotone_iteration(&ctx, c, eps, a, path, &FrontOptions::default()))?;
        let roots = lib(decay_roots(&Dispersion::new(&m.coeffs, &m.coeffs.mu, m.direction), ZeroOrderTag::Mu, eps, c))?;
        let rep = profile_diagnostics(&prof, &roots);
        *report = PfFrontReport {
            iters: prof.iters,
            outer_defect: prof.outer_defect,
            monotone_defect: prof.monotone_defect,
            sandwich_defect: prof.sandwich_defect,
            tail_slope: rep.tail_slope,
            lam: roots.lam,
            right_limit_error: rep.right_limit_error,
        };
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
