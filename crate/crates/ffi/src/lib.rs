//! C interface to the `landsberg` toolkit.
//!
//! Spaces are opaque handles created by `lb_space_builtin` or
//! `lb_space_expression` and released with `lb_space_free`. Every fallible
//! call returns an `LbStatus`; on failure `lb_last_error` describes the
//! problem until the next call on the same thread. Arrays are caller-owned
//! and sized by the space dimension `m` (matrices are `m*m`, row-major).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use landsberg::commands::classify_space;
use landsberg::metric::MetricSpec;
use landsberg::ode::OdeOptions;
use landsberg::transport::{rho, TransportOptions};
use landsberg::{Curve, Error, FinslerSpace};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbStatus {
    Ok = 0,
    NullPointer = 1,
    /// The caller passed something unusable, such as an unknown metric name.
    InvalidArgument = 2,
    /// A geometric or integration failure (point outside the chart, ...).
    Numerical = 3,
    /// An internal panic was caught at the boundary.
    Internal = 4,
}

/// Opaque Finsler space.
pub struct LbSpace {
    inner: FinslerSpace,
}

/// Residuals and flags from a classification scan.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LbClassification {
    pub landsberg_residual: f64,
    pub berwald_residual: f64,
    pub cartan_residual: f64,
    /// 1 when the residual is below the "holds" threshold.
    pub is_landsberg: i32,
    pub is_berwald: i32,
    pub is_riemannian: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LbStatus {
    match landsberg::commands::exit_code(err) {
        landsberg::commands::EXIT_CONFIG_ERROR => LbStatus::InvalidArgument,
        _ => LbStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (LbStatus, String)>) -> LbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            LbStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (LbStatus, String) {
    (status_of(&e), e.to_string())
}

/// A metric that cannot be built is always the caller's input error.
fn construction_err(e: Error) -> (LbStatus, String) {
    (LbStatus::InvalidArgument, e.to_string())
}

fn null(what: &str) -> (LbStatus, String) {
    (LbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (LbStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn space_arg<'a>(p: *const LbSpace) -> Result<&'a FinslerSpace, (LbStatus, String)> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| null("space"))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (LbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out(p: *mut f64, values: &[f64], what: &str) -> Result<(), (LbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), p, values.len());
    Ok(())
}

unsafe fn install(out: *mut *mut LbSpace, space: FinslerSpace) -> Result<(), (LbStatus, String)> {
    *out = Box::into_raw(Box::new(LbSpace { inner: space }));
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a catalog metric. `dimension` is only read by `euclidean`; pass 0
/// for the default.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lb_space_builtin(name: *const c_char, dimension: usize, out: *mut *mut LbSpace) -> LbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let name = str_arg(name, "name")?;
        let spec = MetricSpec::Builtin {
            name: name.to_string(),
            dimension: (dimension > 0).then_some(dimension),
            params: Default::default(),
        };
        install(out, FinslerSpace::from_spec(&spec).map_err(construction_err)?)
    })
}

/// Creates a space from an expression in `x1..xm`, `u1..um` on the box
/// `[lo[i], hi[i]]`.
///
/// # Safety
/// `text` must be NUL-terminated, `lo` and `hi` must hold `dimension` values
/// and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_space_expression(
    text: *const c_char,
    dimension: usize,
    lo: *const f64,
    hi: *const f64,
    out: *mut *mut LbSpace,
) -> LbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let lo = slice_arg(lo, dimension, "lo")?;
        let hi = slice_arg(hi, dimension, "hi")?;
        let spec = MetricSpec::Expression {
            text: text.to_string(),
            dimension,
            domain: lo.iter().zip(hi).map(|(a, b)| [*a, *b]).collect(),
            base_constraint: None,
            sample_box: None,
        };
        install(out, FinslerSpace::from_spec(&spec).map_err(construction_err)?)
    })
}

/// Releases a space. Null is ignored.
///
/// # Safety
/// `space` must come from a constructor in this library and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn lb_space_free(space: *mut LbSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Base dimension `m`, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lb_space_dimension(space: *const LbSpace) -> usize {
    space.as_ref().map_or(0, |s| s.inner.dim())
}

/// `F(x, u)`. Fails for base points outside the chart.
///
/// # Safety
/// `x` and `u` must hold `m` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_finsler_function(
    space: *const LbSpace,
    x: *const f64,
    u: *const f64,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        let s = space_arg(space)?;
        let m = s.dim();
        let (x, u) = (slice_arg(x, m, "x")?, slice_arg(u, m, "u")?);
        s.check_point(x, u).map_err(lib_err)?;
        let f = s.f(x, u).map_err(lib_err)?;
        write_out(out, &[f], "out")
    })
}

/// Fundamental tensor `g_ab(x, u)` into `out[a*m + b]`.
///
/// # Safety
/// `x` and `u` must hold `m` values, `out` room for `m*m`.
#[no_mangle]
pub unsafe extern "C" fn lb_fundamental_tensor(
    space: *const LbSpace,
    x: *const f64,
    u: *const f64,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        let s = space_arg(space)?;
        let m = s.dim();
        let g = s
            .fundamental_tensor(slice_arg(x, m, "x")?, slice_arg(u, m, "u")?)
            .map_err(lib_err)?;
        write_out(out, &g.concat(), "out")
    })
}

/// Spray coefficients `G^i(x, u)`.
///
/// # Safety
/// `x`, `u` and `out` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn lb_spray(space: *const LbSpace, x: *const f64, u: *const f64, out: *mut f64) -> LbStatus {
    guard(|| {
        let s = space_arg(space)?;
        let m = s.dim();
        let g = s.spray(slice_arg(x, m, "x")?, slice_arg(u, m, "u")?).map_err(lib_err)?;
        write_out(out, &g, "out")
    })
}

/// Nonlinear connection `Γ^i_j(x, u)` into `out[i*m + j]`.
///
/// # Safety
/// `x` and `u` must hold `m` values, `out` room for `m*m`.
#[no_mangle]
pub unsafe extern "C" fn lb_nonlinear_connection(
    space: *const LbSpace,
    x: *const f64,
    u: *const f64,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        let s = space_arg(space)?;
        let m = s.dim();
        let g = s
            .nonlinear_connection(slice_arg(x, m, "x")?, slice_arg(u, m, "u")?)
            .map_err(lib_err)?;
        write_out(out, &g.concat(), "out")
    })
}

/// Parallel transport of `u0` along the smoothed polyline through
/// `n_vertices` points (`vertices[k*m + i]`). Writes the endpoint to `out_u`
/// and, when `out_drift` is non-null, the F-drift. `tol <= 0` selects the
/// default integrator tolerance.
///
/// # Safety
/// `vertices` must hold `n_vertices*m` values, `u0` and `out_u` `m` values;
/// `out_drift` may be null.
#[no_mangle]
pub unsafe extern "C" fn lb_transport_polyline(
    space: *const LbSpace,
    vertices: *const f64,
    n_vertices: usize,
    u0: *const f64,
    tol: f64,
    out_u: *mut f64,
    out_drift: *mut f64,
) -> LbStatus {
    guard(|| {
        let s = space_arg(space)?;
        let m = s.dim();
        if n_vertices < 2 {
            return Err((LbStatus::InvalidArgument, "a polyline needs at least two vertices".into()));
        }
        let flat = slice_arg(vertices, n_vertices * m, "vertices")?;
        let curve = Curve::polyline(&flat.chunks(m).map(<[f64]>::to_vec).collect::<Vec<_>>()).map_err(lib_err)?;
        let mut opts = TransportOptions::default();
        if tol > 0.0 {
            opts.ode = OdeOptions::with_tol(tol);
        }
        let r = rho(s, &curve, slice_arg(u0, m, "u0")?, &opts).map_err(lib_err)?;
        write_out(out_u, &r.point, "out_u")?;
        if !out_drift.is_null() {
            *out_drift = r.f_drift;
        }
        Ok(())
    })
}

/// Residual scan over `grid_points` quasi-random base points.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lb_classify(space: *const LbSpace, grid_points: usize, out: *mut LbClassification) -> LbStatus {
    guard(|| {
        let s = space_arg(space)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if grid_points == 0 {
            return Err((LbStatus::InvalidArgument, "grid_points must be positive".into()));
        }
        let c = classify_space(s, grid_points).map_err(lib_err)?;
        use landsberg::report::Verdict::Holds;
        *out = LbClassification {
            landsberg_residual: c.landsberg_residual,
            berwald_residual: c.berwald_residual,
            cartan_residual: c.cartan_residual,
            is_landsberg: (c.landsberg == Holds) as i32,
            is_berwald: (c.berwald == Holds) as i32,
            is_riemannian: (c.riemannian_like == Holds) as i32,
        };
        Ok(())
    })
}
