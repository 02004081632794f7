//! C interface to the parametric QP solver and the signal controller.
//!
//! Every function returns an [`OassStatus`]. On failure a description is
//! available from [`oass_last_error`] on the same thread. Matrices are
//! passed row-major. Handles are opaque and released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use oass_signal::mpc::{Controller, MpcConfig};
use oass_signal::sfm::TrafficNetwork;
use oass_signal::{oass, Error, ParametricQp, QpSolution};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OassStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    NotSymmetric = 3,
    NotPositiveDefinite = 4,
    RankDeficient = 5,
    Infeasible = 6,
    IterationLimit = 7,
    NotOptimalStart = 8,
    InvalidNetwork = 9,
    InvalidConfig = 10,
    BufferTooSmall = 11,
    InvalidUtf8 = 12,
    Panic = 13,
    Other = 14,
}

fn status_of(e: &Error) -> OassStatus {
    match e.root() {
        Error::DimensionMismatch(_) | Error::LengthMismatch(..) => OassStatus::DimensionMismatch,
        Error::NotSymmetric(_) => OassStatus::NotSymmetric,
        Error::NotPositiveDefinite => OassStatus::NotPositiveDefinite,
        Error::RankDeficient => OassStatus::RankDeficient,
        Error::Infeasible { .. } => OassStatus::Infeasible,
        Error::IterationLimit(_) => OassStatus::IterationLimit,
        Error::NotOptimalStart(_) => OassStatus::NotOptimalStart,
        Error::InvalidNetwork(_) | Error::UnknownLink(_) => OassStatus::InvalidNetwork,
        Error::InvalidConfig(_) | Error::ConstraintViolation(_) => OassStatus::InvalidConfig,
        _ => OassStatus::Other,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oass_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

struct Failure(OassStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OassStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OassStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            OassStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OassStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn vector(p: *const f64, len: usize, what: &str) -> Result<DVector<f64>, Failure> {
    Ok(DVector::from_column_slice(slice(p, len, what)?))
}

unsafe fn matrix(
    p: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DMatrix<f64>, Failure> {
    Ok(DMatrix::from_row_slice(
        rows,
        cols,
        slice(p, rows * cols, what)?,
    ))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize, what: &str) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(
            OassStatus::BufferTooSmall,
            format!("`{what}` holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Parametric QP `min U'HU/2 + (F x0 + g_c)'U` subject to `G U >= W + E x0`.
pub struct OassQp(ParametricQp);

/// Primal and dual solution with its active set.
pub struct OassSolution(QpSolution);

/// Rolling-horizon signal controller for one network.
pub struct OassController {
    ctrl: Controller,
    n_links: usize,
    n_inputs: usize,
}

/// Builds a QP from row-major `h` (n x n), `f` (n x p), `g_c` (n),
/// `g` (m x n), `w` (m) and `e` (m x p).
///
/// # Safety
/// Every array must hold the stated number of values and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn oass_qp_new(
    n_vars: usize,
    n_cons: usize,
    n_state: usize,
    h: *const f64,
    f: *const f64,
    g_c: *const f64,
    g: *const f64,
    w: *const f64,
    e: *const f64,
    out: *mut *mut OassQp,
) -> OassStatus {
    guard(|| {
        let qp = ParametricQp::new(
            matrix(h, n_vars, n_vars, "h")?,
            matrix(f, n_vars, n_state, "f")?,
            vector(g_c, n_vars, "g_c")?,
            matrix(g, n_cons, n_vars, "g")?,
            vector(w, n_cons, "w")?,
            matrix(e, n_cons, n_state, "e")?,
        )?;
        write(out, Box::into_raw(Box::new(OassQp(qp))), "out")
    })
}

/// # Safety
/// `qp` must come from [`oass_qp_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oass_qp_free(qp: *mut OassQp) {
    if !qp.is_null() {
        drop(Box::from_raw(qp));
    }
}

/// # Safety
/// `qp` must be a live handle; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn oass_qp_dims(
    qp: *const OassQp,
    n_vars: *mut usize,
    n_cons: *mut usize,
    n_state: *mut usize,
) -> OassStatus {
    guard(|| {
        let qp = &deref(qp, "qp")?.0;
        for (p, v) in [
            (n_vars, qp.n_vars()),
            (n_cons, qp.n_cons()),
            (n_state, qp.n_state()),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Solves `QP(x0)` from scratch. `changes` receives the number of
/// working-set changes and may be null.
///
/// # Safety
/// `x0` must hold `n_state` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oass_qp_cold_start(
    qp: *const OassQp,
    x0: *const f64,
    out: *mut *mut OassSolution,
    changes: *mut usize,
) -> OassStatus {
    guard(|| {
        let qp = &deref(qp, "qp")?.0;
        let x0 = vector(x0, qp.n_state(), "x0")?;
        let (sol, n) = qp.cold_start(&x0)?;
        if !changes.is_null() {
            changes.write(n);
        }
        write(out, Box::into_raw(Box::new(OassSolution(sol))), "out")
    })
}

/// Solves `QP(x0)` by homotopy from `prev`, an optimal solution of the same
/// QP at another parameter.
///
/// # Safety
/// As [`oass_qp_cold_start`]; `prev` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn oass_qp_hot_solve(
    qp: *const OassQp,
    prev: *const OassSolution,
    x0: *const f64,
    out: *mut *mut OassSolution,
    changes: *mut usize,
) -> OassStatus {
    guard(|| {
        let qp = &deref(qp, "qp")?.0;
        let prev = &deref(prev, "prev")?.0;
        let x0 = vector(x0, qp.n_state(), "x0")?;
        let (sol, n) = oass::hot_solve(prev, &x0, qp)?;
        if !changes.is_null() {
            changes.write(n);
        }
        write(out, Box::into_raw(Box::new(OassSolution(sol))), "out")
    })
}

/// # Safety
/// `sol` must come from a solve and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oass_solution_free(sol: *mut OassSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Copies the primal solution into `out` (`len >= n_vars`).
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn oass_solution_primal(
    sol: *const OassSolution,
    out: *mut f64,
    len: usize,
) -> OassStatus {
    guard(|| copy_out(deref(sol, "sol")?.0.primal.as_slice(), out, len, "out"))
}

/// Copies one multiplier per constraint into `out` (`len >= n_cons`).
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn oass_solution_dual(
    sol: *const OassSolution,
    out: *mut f64,
    len: usize,
) -> OassStatus {
    guard(|| copy_out(deref(sol, "sol")?.0.dual.as_slice(), out, len, "out"))
}

/// Writes the number of active constraints to `count` and, when `out` is
/// not null, their sorted indices.
///
/// # Safety
/// `count` must be writable; `out` null or writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn oass_solution_active(
    sol: *const OassSolution,
    out: *mut usize,
    len: usize,
    count: *mut usize,
) -> OassStatus {
    guard(|| {
        let active = deref(sol, "sol")?.0.working_set.sorted_active();
        write(count, active.len(), "count")?;
        if out.is_null() {
            return Ok(());
        }
        if len < active.len() {
            return Err(Failure(
                OassStatus::BufferTooSmall,
                format!("`out` holds {len} indices, {} needed", active.len()),
            ));
        }
        ptr::copy_nonoverlapping(active.as_ptr(), out, active.len());
        Ok(())
    })
}

/// Objective value of `sol` for `qp` at the solution's parameter.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oass_solution_objective(
    qp: *const OassQp,
    sol: *const OassSolution,
    out: *mut f64,
) -> OassStatus {
    guard(|| {
        let v = deref(sol, "sol")?.0.objective(&deref(qp, "qp")?.0)?;
        write(out, v, "out")
    })
}

/// Controller for a network given as TOML text, with default bounds and
/// weights. `source_inflow` is the expected source demand in veh/h used by
/// the predictor.
///
/// # Safety
/// `network_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oass_controller_new(
    network_toml: *const c_char,
    horizon: usize,
    n_itr: usize,
    source_inflow: f64,
    out: *mut *mut OassController,
) -> OassStatus {
    guard(|| {
        if network_toml.is_null() {
            return Err(null("network_toml"));
        }
        let text = CStr::from_ptr(network_toml)
            .to_str()
            .map_err(|e| Failure(OassStatus::InvalidUtf8, e.to_string()))?;
        let net = TrafficNetwork::from_toml_str(text)?;
        let mut cfg = MpcConfig::for_network(&net, horizon)?;
        cfg.n_itr = n_itr;
        cfg.validate(net.n_links(), net.n_inputs())?;
        let mut model = net.linearize();
        for (e, q) in model
            .e
            .iter_mut()
            .zip(net.source_inflow(source_inflow / 3600.0))
        {
            *e += net.cycle_time() * q;
        }
        let ctrl = Controller::new(&net, &model, cfg)?;
        let handle = OassController {
            ctrl,
            n_links: net.n_links(),
            n_inputs: net.n_inputs(),
        };
        write(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `ctrl` must come from [`oass_controller_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oass_controller_free(ctrl: *mut OassController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// # Safety
/// `ctrl` must be live; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn oass_controller_dims(
    ctrl: *const OassController,
    n_links: *mut usize,
    n_inputs: *mut usize,
) -> OassStatus {
    guard(|| {
        let c = deref(ctrl, "ctrl")?;
        if !n_links.is_null() {
            n_links.write(c.n_links);
        }
        if !n_inputs.is_null() {
            n_inputs.write(c.n_inputs);
        }
        Ok(())
    })
}

/// One solve per cycle for queues `x`. With `warm` nonzero the solve starts
/// from the previous cycle's solution. Writes the green times to `plan`,
/// and the change count and fallback flag when those pointers are not null.
///
/// # Safety
/// `x` must hold `n_links` values and `plan` must be writable for `len`.
#[no_mangle]
pub unsafe extern "C" fn oass_controller_cycle(
    ctrl: *mut OassController,
    x: *const f64,
    warm: i32,
    plan: *mut f64,
    len: usize,
    changes: *mut usize,
    fallback: *mut i32,
) -> OassStatus {
    guard(|| {
        let c = deref_mut(ctrl, "ctrl")?;
        let x = vector(x, c.n_links, "x")?;
        let outcome = c.ctrl.classic_cycle(&x, warm != 0)?;
        copy_out(outcome.plan.as_slice(), plan, len, "plan")?;
        if !changes.is_null() {
            changes.write(outcome.changes);
        }
        if !fallback.is_null() {
            fallback.write(i32::from(outcome.fallback));
        }
        Ok(())
    })
}

/// Work for sample interval `i` (1-based) of `n_itr` with queues `x`. After
/// the last interval `done` is set to 1 and `plan` receives the green times;
/// before it `done` is 0 and `plan` is untouched.
///
/// # Safety
/// As [`oass_controller_cycle`]; `done` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oass_controller_interval(
    ctrl: *mut OassController,
    x: *const f64,
    i: usize,
    plan: *mut f64,
    len: usize,
    done: *mut i32,
) -> OassStatus {
    guard(|| {
        let c = deref_mut(ctrl, "ctrl")?;
        let x = vector(x, c.n_links, "x")?;
        match c.ctrl.interval_tick(&x, i)? {
            Some(outcome) => {
                copy_out(outcome.plan.as_slice(), plan, len, "plan")?;
                write(done, 1, "done")
            }
            None => write(done, 0, "done"),
        }
    })
}
