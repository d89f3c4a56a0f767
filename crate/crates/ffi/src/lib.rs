//! C ABI over `rmtq`.
//!
//! Every function returns an [`RmtqStatus`]; on failure the message is kept
//! per thread and can be copied out with [`rmtq_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rmtq::ensembles::{sample_wigner_with, EntryLaw, SymmetryClass};
use rmtq::gapref::{self, ks_distance, EmpiricalCdf, GapReference};
use rmtq::mde::{self, DeformationSpectrum, DensityEvaluator};
use rmtq::{spectral, Error, SeededRandomSource, C64};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmtqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    /// Solver failure: no convergence, branch loss, singular factor.
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Tabulated Gaudin-Mehta gap density.
pub struct RmtqGapReference {
    inner: GapReference,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RmtqStatus {
    match e {
        Error::NoConvergence { .. }
        | Error::ContinuationFailed { .. }
        | Error::Eigensolver
        | Error::Singular(_)
        | Error::BranchLoss { .. }
        | Error::StepUnderflow { .. }
        | Error::OrderingViolation { .. } => RmtqStatus::Numerical,
        _ => RmtqStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RmtqStatus, String)>) -> RmtqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RmtqStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside rmtq".into());
            RmtqStatus::Panic
        }
    }
}

fn lib<T>(r: rmtq::Result<T>) -> Result<T, (RmtqStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RmtqStatus, String) {
    (RmtqStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (RmtqStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn symmetry(beta: u8) -> Result<SymmetryClass, (RmtqStatus, String)> {
    lib(SymmetryClass::from_beta(beta))
}

/// Copies the last error of this thread, NUL terminated, into `buf`.
/// Returns the length including the terminator (0 if there is no error);
/// nothing is written when `len` is smaller than that.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rmtq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len >= bytes.len() {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmtq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Gaudin-Mehta table for `beta` in {1, 2} on `[0, s_max]` with `points`
/// nodes. Pass `s_max = 0` and `points = 0` for the default table.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rmtq_gap_reference_new(
    beta: u8,
    s_max: f64,
    points: usize,
    out: *mut *mut RmtqGapReference,
) -> RmtqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = if s_max == 0.0 && points == 0 {
            lib(gapref::gaudin_mehta(beta))?.clone()
        } else {
            lib(gapref::painleve_reference(beta, s_max, points))?
        };
        *out = Box::into_raw(Box::new(RmtqGapReference { inner }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`rmtq_gap_reference_new`] and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rmtq_gap_reference_density(
    handle: *const RmtqGapReference,
    s: f64,
    out: *mut f64,
) -> RmtqStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = h.inner.density_at(s);
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`rmtq_gap_reference_new`] and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rmtq_gap_reference_cdf(handle: *const RmtqGapReference, s: f64, out: *mut f64) -> RmtqStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = h.inner.cdf_at(s);
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`rmtq_gap_reference_new`], and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmtq_gap_reference_free(handle: *mut RmtqGapReference) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Solves the scalar MDE for the deformation eigenvalues `d[0..n]` at
/// `z = z_re + i z_im`, `z_im != 0`.
///
/// # Safety
/// `d` must point to `n` doubles; `m_re`, `m_im` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmtq_mde_solve(
    d: *const f64,
    n: usize,
    z_re: f64,
    z_im: f64,
    m_re: *mut f64,
    m_im: *mut f64,
) -> RmtqStatus {
    guard(|| {
        let values = slice(d, n, "d")?;
        if m_re.is_null() || m_im.is_null() {
            return Err(null("m_re/m_im"));
        }
        let spec = lib(DeformationSpectrum::from_values(values))?;
        let sol = lib(mde::solve_mde(&spec, C64::new(z_re, z_im)))?;
        *m_re = sol.m().re;
        *m_im = sol.m().im;
        Ok(())
    })
}

/// Self-consistent density and CDF at a real energy.
///
/// # Safety
/// `d` must point to `n` doubles; `rho`, `cdf` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmtq_mde_density(
    d: *const f64,
    n: usize,
    energy: f64,
    rho: *mut f64,
    cdf: *mut f64,
) -> RmtqStatus {
    guard(|| {
        let values = slice(d, n, "d")?;
        if rho.is_null() || cdf.is_null() {
            return Err(null("rho/cdf"));
        }
        let ev = DensityEvaluator::new(lib(DeformationSpectrum::from_values(values))?);
        let p = lib(ev.point(energy))?;
        *rho = p.rho;
        *cdf = lib(ev.cdf_at(energy))?;
        Ok(())
    })
}

/// Ascending eigenvalues of a Gaussian Wigner matrix (GOE for `beta = 1`,
/// GUE for `beta = 2`) drawn from `seed`, written to `out[0..n]`.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rmtq_sample_wigner_eigenvalues(
    n: usize,
    beta: u8,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> RmtqStatus {
    guard(|| {
        let sym = symmetry(beta)?;
        if n == 0 || n > rmtq::ensembles::DEFAULT_MAX_DIMENSION {
            return Err((RmtqStatus::InvalidInput, format!("dimension {n} outside [1, 4096]")));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < n {
            return Err((RmtqStatus::BufferTooSmall, format!("need {n} doubles, got {out_len}")));
        }
        let mut rng = SeededRandomSource::from_master(seed);
        let h = sample_wigner_with(n, sym, EntryLaw::Gaussian, &mut rng);
        let sd = lib(spectral::eigh(&h, false))?;
        ptr::copy_nonoverlapping(sd.eigenvalues().as_ptr(), out, n);
        Ok(())
    })
}

/// KS distance between `samples` and the Gaudin-Mehta CDF for `beta`.
///
/// # Safety
/// `samples` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmtq_ks_distance(samples: *const f64, len: usize, beta: u8, out: *mut f64) -> RmtqStatus {
    guard(|| {
        let values = slice(samples, len, "samples")?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let reference = lib(gapref::gaudin_mehta(beta))?;
        let emp = lib(EmpiricalCdf::new(values.to_vec()))?;
        *o = ks_distance(&emp, reference);
        Ok(())
    })
}
