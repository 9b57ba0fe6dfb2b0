//! C ABI over the heisenvar toolkit.
//!
//! Masks and fields cross the boundary as opaque handles that the caller
//! frees with the matching `*_free`. Every fallible call returns an
//! `HvStatus`; the message of the last failure on the calling thread is
//! available through `hv_last_error`. Panics are caught at the boundary and
//! reported as `HV_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use heisenvar::extremals::{self, BubbleSpec, SstarConfig};
use heisenvar::subcrit::{solve_subcritical, SubcritConfig};
use heisenvar::{hdiff, heis, io, DomainMask, Error, Field, Grid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotConverged = 3,
    Format = 4,
    Io = 5,
    Internal = 6,
}

/// Opaque domain mask on a rectangular grid.
pub struct HvMask(Arc<DomainMask>);

/// Opaque field on a mask.
pub struct HvField(Field);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HvStatus {
    match e {
        _ if e.is_convergence() => HvStatus::NotConverged,
        Error::Format(_) | Error::LengthMismatch { .. } | Error::Json(_) => HvStatus::Format,
        Error::Io { .. } => HvStatus::Io,
        Error::Invariant(_) => HvStatus::Internal,
        _ => HvStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), (HvStatus, String)>>(f: F) -> HvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HvStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("panic inside heisenvar");
            HvStatus::Internal
        }
    }
}

fn lib<T>(r: heisenvar::Result<T>) -> Result<T, (HvStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HvStatus, String) {
    (HvStatus::NullPointer, format!("{what} is null"))
}

unsafe fn array<'a, const N: usize>(p: *const f64, what: &str) -> Result<&'a [f64; N], (HvStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(&*(p as *const [f64; N]))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, (HvStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HvStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn out<T>(dst: *mut T, v: T) -> Result<(), (HvStatus, String)> {
    if dst.is_null() {
        return Err(null("output pointer"));
    }
    dst.write(v);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated) and returns its full length without the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn hv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Korányi gauge of (x, y, t).
///
/// # Safety
/// `p` must point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn hv_gauge(p: *const f64, result: *mut f64) -> HvStatus {
    guard(|| {
        let p = array::<3>(p, "point")?;
        out(result, heis::h1::gauge(*p))
    })
}

/// a ∘ b in the group law of ℍ¹.
///
/// # Safety
/// `a` and `b` must point to three doubles, `result` to three writable ones.
#[no_mangle]
pub unsafe extern "C" fn hv_compose(a: *const f64, b: *const f64, result: *mut f64) -> HvStatus {
    guard(|| {
        let (a, b) = (array::<3>(a, "a")?, array::<3>(b, "b")?);
        if result.is_null() {
            return Err(null("result"));
        }
        let c = heis::h1::compose(*a, *b);
        ptr::copy_nonoverlapping(c.as_ptr(), result, 3);
        Ok(())
    })
}

/// Full-box mask. `bounds` holds (x0, x1, y0, y1, t0, t1), `res` the node
/// counts per axis.
///
/// # Safety
/// `bounds` must point to six doubles, `res` to three sizes, `mask` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn hv_mask_box(bounds: *const f64, res: *const usize, mask: *mut *mut HvMask) -> HvStatus {
    guard(|| {
        let g = grid(bounds, res)?;
        let m = lib(DomainMask::full_box(g))?;
        out(mask, Box::into_raw(Box::new(HvMask(Arc::new(m)))))
    })
}

/// Korányi ball of `radius` around `center` on the given grid.
///
/// # Safety
/// As [`hv_mask_box`]; `center` must point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn hv_mask_ball(
    bounds: *const f64,
    res: *const usize,
    center: *const f64,
    radius: f64,
    mask: *mut *mut HvMask,
) -> HvStatus {
    guard(|| {
        let g = grid(bounds, res)?;
        let c = array::<3>(center, "center")?;
        let m = lib(DomainMask::koranyi_ball(g, *c, radius))?;
        out(mask, Box::into_raw(Box::new(HvMask(Arc::new(m)))))
    })
}

unsafe fn grid(bounds: *const f64, res: *const usize) -> Result<Grid, (HvStatus, String)> {
    let b = array::<6>(bounds, "bounds")?;
    if res.is_null() {
        return Err(null("res"));
    }
    let r = &*(res as *const [usize; 3]);
    lib(Grid::new([[b[0], b[1]], [b[2], b[3]], [b[4], b[5]]], *r))
}

/// Number of interior nodes of the mask.
///
/// # Safety
/// `mask` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hv_mask_count(mask: *const HvMask, count: *mut usize) -> HvStatus {
    guard(|| {
        let m = mask.as_ref().ok_or_else(|| null("mask"))?;
        out(count, m.0.count())
    })
}

/// # Safety
/// `mask` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hv_mask_free(mask: *mut HvMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Samples amplitude·λ⁻¹·U(δ_{1/λ}(center⁻¹ ∘ ξ)) on the mask.
///
/// # Safety
/// `mask` must be live, `center` three doubles, `field` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn hv_field_bubble(
    mask: *const HvMask,
    lambda: f64,
    center: *const f64,
    amplitude: f64,
    field: *mut *mut HvField,
) -> HvStatus {
    guard(|| {
        let m = mask.as_ref().ok_or_else(|| null("mask"))?;
        let c = array::<3>(center, "center")?;
        let spec = BubbleSpec::new(lambda, *c).with_amplitude(amplitude);
        let u = lib(extremals::bubble_field(&spec, &m.0))?;
        out(field, Box::into_raw(Box::new(HvField(u))))
    })
}

/// Reads an HSF1 file.
///
/// # Safety
/// `file` must be a NUL-terminated path, `field` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn hv_field_load(file: *const c_char, field: *mut *mut HvField) -> HvStatus {
    guard(|| {
        let u = lib(io::load_field(path(file)?))?;
        out(field, Box::into_raw(Box::new(HvField(u))))
    })
}

/// Writes an HSF1 file.
///
/// # Safety
/// `field` must be live and `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn hv_field_save(field: *const HvField, file: *const c_char) -> HvStatus {
    guard(|| {
        let u = field.as_ref().ok_or_else(|| null("field"))?;
        lib(io::save_field(&u.0, path(file)?))
    })
}

/// Node count of the field's grid (interior and exterior).
///
/// # Safety
/// `field` must be live.
#[no_mangle]
pub unsafe extern "C" fn hv_field_len(field: *const HvField, len: *mut usize) -> HvStatus {
    guard(|| {
        let u = field.as_ref().ok_or_else(|| null("field"))?;
        out(len, u.0.values().len())
    })
}

/// Copies the node values (x fastest) into `buf`, which must hold exactly
/// `hv_field_len` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hv_field_values(field: *const HvField, buf: *mut f64, len: usize) -> HvStatus {
    guard(|| {
        let u = field.as_ref().ok_or_else(|| null("field"))?;
        let v = u.0.values();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != v.len() {
            return Err((
                HvStatus::InvalidArgument,
                format!("buffer holds {len} values, field has {}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hv_field_free(field: *mut HvField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Discrete Dirichlet energy ∫|D_H u|².
///
/// # Safety
/// `field` must be live.
#[no_mangle]
pub unsafe extern "C" fn hv_dirichlet_energy(field: *const HvField, result: *mut f64) -> HvStatus {
    guard(|| {
        let u = field.as_ref().ok_or_else(|| null("field"))?;
        out(result, hdiff::dirichlet_energy(&u.0))
    })
}

/// ∫|u|⁴ / (∫|D_H u|²)².
///
/// # Safety
/// `field` must be live.
#[no_mangle]
pub unsafe extern "C" fn hv_sobolev_quotient(field: *const HvField, result: *mut f64) -> HvStatus {
    guard(|| {
        let u = field.as_ref().ok_or_else(|| null("field"))?;
        out(result, lib(extremals::sobolev_quotient(&u.0))?)
    })
}

/// Sharp-constant estimate with the default level ladder.
///
/// # Safety
/// `value` and `error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hv_estimate_sstar(value: *mut f64, error: *mut f64) -> HvStatus {
    guard(|| {
        let e = lib(extremals::estimate_sstar(&SstarConfig::default()))?;
        out(value, e.value)?;
        out(error, e.error)
    })
}

/// Subcritical maximizer for exponent 4 − ε on the mask. Writes the
/// maximizer handle and S*_ε; a run that stops at the iteration cap still
/// hands back its last iterate together with `HV_STATUS_NOT_CONVERGED`.
///
/// # Safety
/// `mask` must be live; `field` and `s_eps` writable.
#[no_mangle]
pub unsafe extern "C" fn hv_solve_subcritical(
    mask: *const HvMask,
    eps: f64,
    fp_tol: f64,
    fp_max_iter: usize,
    field: *mut *mut HvField,
    s_eps: *mut f64,
) -> HvStatus {
    guard(|| {
        let m = mask.as_ref().ok_or_else(|| null("mask"))?;
        if field.is_null() || s_eps.is_null() {
            return Err(null("output pointer"));
        }
        let mut cfg = SubcritConfig::new(eps);
        cfg.fp_tol = fp_tol;
        cfg.fp_max_iter = fp_max_iter;
        lib(cfg.validate())?;
        let r = lib(solve_subcritical(&cfg, &m.0))?;
        out(s_eps, r.s_eps)?;
        out(field, Box::into_raw(Box::new(HvField(r.maximizer))))?;
        if r.converged {
            Ok(())
        } else {
            Err((
                HvStatus::NotConverged,
                format!("stopped after {} iterations", r.iterations),
            ))
        }
    })
}
