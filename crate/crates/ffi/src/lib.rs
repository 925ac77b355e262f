//! C interface to `carleman-core`.
//!
//! Every entry point returns a [`CarlemanStatus`]; on failure the message is
//! available from [`carleman_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use carleman_core::carleman::{CarlemanModel as Model, Discretization, ModelParams};
use carleman_core::reference::{error_norms, reference_for, exact_burgers};
use carleman_core::solver::{self, Trajectory};
use carleman_core::{sparse, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarlemanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    SingularStep = 3,
    NotConverged = 4,
    Diverged = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarlemanDiscretization {
    Standard = 0,
    Sparse = 1,
}

/// Model parameters; `lambda` is the destabilizing coefficient, `t_final` the horizon.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanParams {
    pub nu: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t_final: f64,
    pub dt: f64,
    pub truncation: u32,
    pub level: u32,
    pub discretization: CarlemanDiscretization,
}

impl From<&ModelParams> for CarlemanParams {
    fn from(p: &ModelParams) -> Self {
        CarlemanParams {
            nu: p.nu,
            lambda: p.lambda_destab,
            a: p.a,
            b: p.b,
            c: p.c,
            t_final: p.t_final,
            dt: p.dt,
            truncation: p.truncation as u32,
            level: p.level,
            discretization: match p.discretization {
                Discretization::Standard => CarlemanDiscretization::Standard,
                Discretization::Sparse => CarlemanDiscretization::Sparse,
            },
        }
    }
}

impl From<&CarlemanParams> for ModelParams {
    fn from(p: &CarlemanParams) -> Self {
        ModelParams {
            nu: p.nu,
            lambda_destab: p.lambda,
            a: p.a,
            b: p.b,
            c: p.c,
            t_final: p.t_final,
            dt: p.dt,
            truncation: p.truncation as usize,
            level: p.level,
            discretization: match p.discretization {
                CarlemanDiscretization::Standard => Discretization::Standard,
                CarlemanDiscretization::Sparse => Discretization::Sparse,
            },
            nonlocal: None,
        }
    }
}

/// Opaque model handle.
pub struct CarlemanModel {
    inner: Model,
}

/// Opaque first-moment trajectory handle.
pub struct CarlemanTrajectory {
    params: ModelParams,
    inner: Trajectory,
    max_sweeps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CarlemanStatus {
    match e {
        Error::SingularStep { .. } => CarlemanStatus::SingularStep,
        Error::NotConverged { .. } | Error::NewtonFailed { .. } => CarlemanStatus::NotConverged,
        Error::Diverged { .. } => CarlemanStatus::Diverged,
        Error::Numerical(_) | Error::Io(_) => CarlemanStatus::Internal,
        _ => CarlemanStatus::InvalidParameter,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CarlemanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CarlemanStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            CarlemanStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            CarlemanStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: caller passes a valid pointer or null.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes a valid, writable pointer or null.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn carleman_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Writes the library defaults into `out`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `CarlemanParams`.
#[no_mangle]
pub unsafe extern "C" fn carleman_params_default(out_params: *mut CarlemanParams) -> CarlemanStatus {
    guard(|| {
        *unsafe { out(out_params, "out_params") }? = CarlemanParams::from(&ModelParams::default());
        Ok(())
    })
}

/// Validates `params` and builds a model; the handle is written to `out_model`.
///
/// # Safety
/// `params` must be NULL or point to a valid `CarlemanParams`; `out_model`
/// must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_model_new(
    params: *const CarlemanParams,
    out_model: *mut *mut CarlemanModel,
) -> CarlemanStatus {
    guard(|| {
        let p = unsafe { deref(params, "params") }?;
        let slot = unsafe { out(out_model, "out_model") }?;
        let inner = Model::new(ModelParams::from(p))?;
        *slot = Box::into_raw(Box::new(CarlemanModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from `carleman_model_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn carleman_model_free(model: *mut CarlemanModel) {
    if !model.is_null() {
        // SAFETY: allocated by Box::into_raw in carleman_model_new.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Integrates the model over `[0, T]`.
///
/// # Safety
/// `model` must be a live handle; `out_traj` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_model_solve(
    model: *const CarlemanModel,
    out_traj: *mut *mut CarlemanTrajectory,
) -> CarlemanStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let slot = unsafe { out(out_traj, "out_traj") }?;
        let (traj, rep) = solver::solve(&m.inner)?;
        *slot = Box::into_raw(Box::new(CarlemanTrajectory {
            params: m.inner.params().clone(),
            inner: traj,
            max_sweeps: rep.max_sweeps,
        }));
        Ok(())
    })
}

/// # Safety
/// `traj` must be NULL or a handle from `carleman_model_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn carleman_trajectory_free(traj: *mut CarlemanTrajectory) {
    if !traj.is_null() {
        // SAFETY: allocated by Box::into_raw in carleman_model_solve.
        drop(unsafe { Box::from_raw(traj) });
    }
}

/// Number of recorded times (`T / dt + 1`).
///
/// # Safety
/// `traj` must be a live handle; `out_len` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_trajectory_len(traj: *const CarlemanTrajectory, out_len: *mut usize) -> CarlemanStatus {
    guard(|| {
        let t = unsafe { deref(traj, "traj") }?;
        *unsafe { out(out_len, "out_len") }? = t.inner.len();
        Ok(())
    })
}

/// Interior node count of the first moment.
///
/// # Safety
/// `traj` must be a live handle; `out_dim` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_trajectory_dim(traj: *const CarlemanTrajectory, out_dim: *mut usize) -> CarlemanStatus {
    guard(|| {
        let t = unsafe { deref(traj, "traj") }?;
        *unsafe { out(out_dim, "out_dim") }? = t.inner.first_moment.first().map_or(0, Vec::len);
        Ok(())
    })
}

/// Largest Gauss-Seidel sweep count of the solve (1 for back-substitution).
///
/// # Safety
/// `traj` must be a live handle; `out_sweeps` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_trajectory_max_sweeps(
    traj: *const CarlemanTrajectory,
    out_sweeps: *mut usize,
) -> CarlemanStatus {
    guard(|| {
        let t = unsafe { deref(traj, "traj") }?;
        *unsafe { out(out_sweeps, "out_sweeps") }? = t.max_sweeps;
        Ok(())
    })
}

/// # Safety
/// `traj` must be a live handle; `out_time` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_trajectory_time(
    traj: *const CarlemanTrajectory,
    index: usize,
    out_time: *mut f64,
) -> CarlemanStatus {
    guard(|| {
        let t = unsafe { deref(traj, "traj") }?;
        let v = *t.inner.times.get(index).ok_or_else(|| Error::DimensionMismatch(format!("time index {index} out of range")))?;
        *unsafe { out(out_time, "out_time") }? = v;
        Ok(())
    })
}

/// Copies the first-moment nodal values at time index `index` into `buf`,
/// which must hold exactly `carleman_trajectory_dim` values.
///
/// # Safety
/// `traj` must be a live handle; `buf` must be NULL or point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn carleman_trajectory_first_moment(
    traj: *const CarlemanTrajectory,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> CarlemanStatus {
    guard(|| {
        let t = unsafe { deref(traj, "traj") }?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let v = t
            .inner
            .first_moment
            .get(index)
            .ok_or_else(|| Error::DimensionMismatch(format!("time index {index} out of range")))?;
        if v.len() != len {
            return Err(Error::DimensionMismatch(format!("buffer holds {len} values, need {}", v.len())).into());
        }
        // SAFETY: buf is non-null with room for len = v.len() doubles.
        unsafe { ptr::copy_nonoverlapping(v.as_ptr(), buf, len) };
        Ok(())
    })
}

/// Error of the trajectory against the closed form when it applies, else
/// against the fine baseline on level `ref_level` with step `dt_ref`.
///
/// # Safety
/// `traj` must be a live handle; the output pointers must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_error_norms(
    traj: *const CarlemanTrajectory,
    ref_level: u32,
    dt_ref: f64,
    out_linf_h: *mut f64,
    out_l2_v: *mut f64,
) -> CarlemanStatus {
    guard(|| {
        let t = unsafe { deref(traj, "traj") }?;
        let linf = unsafe { out(out_linf_h, "out_linf_h") }?;
        let l2 = unsafe { out(out_l2_v, "out_l2_v") }?;
        let reference = reference_for(&t.params, ref_level, dt_ref)?;
        let e = error_norms(&t.inner, &reference)?;
        *linf = e.linf_h;
        *l2 = e.l2_v;
        Ok(())
    })
}

/// Closed-form Burgers solution for `b = nu`, `lambda = 0`, `c = 0`.
#[no_mangle]
pub extern "C" fn carleman_exact_burgers(t: f64, x: f64, nu: f64, a: f64) -> f64 {
    exact_burgers(t, x, nu, a)
}

/// Dimension of the sparse tensor space of order `k` on level `level`.
///
/// # Safety
/// `out_dim` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_sparse_dim(k: u32, level: u32, out_dim: *mut u64) -> CarlemanStatus {
    guard(|| {
        let slot = unsafe { out(out_dim, "out_dim") }?;
        let d = sparse::sparse_dim(k as usize, level);
        *slot = u64::try_from(d).map_err(|_| Error::Numerical(format!("sparse_dim({k}, {level}) exceeds u64")))?;
        Ok(())
    })
}

/// `(2^level - 1)^k`; fails when the value does not fit in 64 bits.
///
/// # Safety
/// `out_dim` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn carleman_standard_dim(k: u32, level: u32, out_dim: *mut u64) -> CarlemanStatus {
    guard(|| {
        let slot = unsafe { out(out_dim, "out_dim") }?;
        let d = sparse::standard_dim(k as usize, level)?;
        *slot = u64::try_from(d).map_err(|_| Error::Numerical(format!("standard_dim({k}, {level}) exceeds u64")))?;
        Ok(())
    })
}
