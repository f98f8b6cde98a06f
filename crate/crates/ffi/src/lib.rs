//! C ABI over the fbm-currents library.
//!
//! Objects are opaque handles created by `*_new`/`*_sample` and released by
//! the matching `*_free`. Every fallible call returns an `FcStatus`; results
//! go through out-pointers that are written only on success. The message of
//! the most recent failure on the calling thread is available from
//! `fc_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fbm_currents::bessel_kernel::{KernelSpec, KernelTable};
use fbm_currents::current_functionals::{expected_z_exact_with, z_double_integral_with, BoundaryPolicy};
use fbm_currents::gaussian_paths::{sample_fbm, DerivScheme, FbmParams, FbmPath, SchemeKind};
use fbm_currents::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    MisalignedEpsilon = 3,
    SingularAtOrigin = 4,
    Divergent = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Numerical = 8,
    Panic = 9,
}

/// Finite-difference scheme of the mollified derivative.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcScheme {
    /// `(X_{t+eps} - X_{t-eps}) / (2 eps)`
    Symmetric = 0,
    /// `(X_{t+eps} - X_t) / eps`
    Forward = 1,
}

impl From<FcScheme> for SchemeKind {
    fn from(s: FcScheme) -> Self {
        match s {
            FcScheme::Symmetric => SchemeKind::Symmetric,
            FcScheme::Forward => SchemeKind::Forward,
        }
    }
}

/// Tabulated Bessel-potential kernel `K_alpha` in dimension `d`.
pub struct FcKernel(KernelTable);

/// A sampled fBm path on a uniform grid.
pub struct FcPath(FbmPath);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::InvalidParameter { .. } | Error::ForwardSchemeUnsupported { .. } => FcStatus::InvalidParameter,
        Error::MisalignedEpsilon { .. } => FcStatus::MisalignedEpsilon,
        Error::SingularAtOrigin { .. } => FcStatus::SingularAtOrigin,
        Error::Divergent(_) | Error::Undecidable(_) => FcStatus::Divergent,
        _ => FcStatus::Numerical,
    }
}

/// Run `f`, translating library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (FcStatus, String)>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FcStatus::Panic
        }
    }
}

fn lib<T>(r: fbm_currents::Result<T>) -> Result<T, (FcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (FcStatus, String) {
    (FcStatus::NullPointer, format!("`{name}` is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Build the kernel table for `(alpha, dim)`; requires `alpha > 0`, `dim >= 1`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_kernel_new(alpha: f64, dim: usize, out: *mut *mut FcKernel) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = lib(KernelSpec::new(alpha, dim))?;
        *out = Box::into_raw(Box::new(FcKernel(KernelTable::new(spec))));
        Ok(())
    })
}

/// Release a kernel; null is ignored.
///
/// # Safety
/// `kernel` must come from `fc_kernel_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fc_kernel_free(kernel: *mut FcKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// `K_alpha(r)` for `r > 0`, or `r = 0` when the kernel is bounded.
///
/// # Safety
/// `kernel` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fc_kernel_eval(kernel: *const FcKernel, r: f64, out: *mut f64) -> FcStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(r >= 0.0) || !r.is_finite() {
            return Err((FcStatus::OutOfRange, format!("radius {r} must be finite and non-negative")));
        }
        let spec = *k.0.spec();
        *out = if r == 0.0 {
            match k.0.k_zero() {
                Some(v) => v,
                None => return lib(Err(Error::SingularAtOrigin { alpha: spec.alpha, dim: spec.dim })),
            }
        } else {
            k.0.eval(r)
        };
        Ok(())
    })
}

/// Sample an fBm path with `n_steps` steps on `[0, horizon]`. When
/// `pad_epsilon > 0` the grid is extended so derivatives of width
/// `pad_epsilon` are defined up to `horizon`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_path_sample(
    hurst: f64,
    dim: usize,
    horizon: f64,
    n_steps: usize,
    pad_epsilon: f64,
    seed: u64,
    out: *mut *mut FcPath,
) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut params = FbmParams::new(hurst, dim, horizon, n_steps, seed);
        if pad_epsilon > 0.0 {
            params = params.padded_for(pad_epsilon);
        }
        let path = lib(sample_fbm(params))?;
        *out = Box::into_raw(Box::new(FcPath(path)));
        Ok(())
    })
}

/// Release a path; null is ignored.
///
/// # Safety
/// `path` must come from `fc_path_sample` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fc_path_free(path: *mut FcPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Spatial dimension and number of grid nodes, padding included.
///
/// # Safety
/// `path` must be a live handle; `dim` and `n_nodes` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_path_shape(path: *const FcPath, dim: *mut usize, n_nodes: *mut usize) -> FcStatus {
    guard(|| {
        let p = path.as_ref().ok_or_else(|| null("path"))?;
        if dim.is_null() || n_nodes.is_null() {
            return Err(null("dim/n_nodes"));
        }
        *dim = p.0.dim();
        *n_nodes = p.0.params.total_nodes();
        Ok(())
    })
}

/// Copy coordinate `axis` of every node into `buf` of length `len`.
///
/// # Safety
/// `path` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fc_path_coordinate(path: *const FcPath, axis: usize, buf: *mut f64, len: usize) -> FcStatus {
    guard(|| {
        let p = path.as_ref().ok_or_else(|| null("path"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let row = p.0.values.get(axis).ok_or_else(|| {
            (FcStatus::OutOfRange, format!("axis {axis} out of range for dimension {}", p.0.dim()))
        })?;
        if len < row.len() {
            return Err((FcStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", row.len())));
        }
        std::ptr::copy_nonoverlapping(row.as_ptr(), buf, row.len());
        Ok(())
    })
}

/// Per-path `Z = int int K_alpha(X_t - X_s) <D X_t, D X_s> dt ds` on `[0, T]`.
///
/// # Safety
/// `path` and `kernel` must be live handles and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fc_z_double_integral(
    path: *const FcPath,
    kernel: *const FcKernel,
    scheme: FcScheme,
    epsilon: f64,
    out: *mut f64,
) -> FcStatus {
    guard(|| {
        let p = path.as_ref().ok_or_else(|| null("path"))?;
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let est = lib(z_double_integral_with(
            &p.0,
            &k.0,
            DerivScheme::new(scheme.into(), epsilon),
            BoundaryPolicy::Truncation,
        ))?;
        *out = est.value;
        Ok(())
    })
}

/// Exact `E Z` for fBm of Hurst index `hurst` on `[0, horizon]`, with the
/// quadrature error estimate in `abs_error` (may be null).
///
/// # Safety
/// `kernel` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fc_expected_z_exact(
    kernel: *const FcKernel,
    hurst: f64,
    scheme: FcScheme,
    epsilon: f64,
    horizon: f64,
    out: *mut f64,
    abs_error: *mut f64,
) -> FcStatus {
    guard(|| {
        let k = kernel.as_ref().ok_or_else(|| null("kernel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let e = lib(expected_z_exact_with(
            &k.0,
            hurst,
            scheme.into(),
            epsilon,
            horizon,
            BoundaryPolicy::Truncation,
        ))?;
        *out = e.value;
        if !abs_error.is_null() {
            *abs_error = e.abs_error;
        }
        Ok(())
    })
}
