//! C ABI over `rabies-core`.
//!
//! Objects cross the boundary as opaque handles created by `rabies_*_new`
//! style functions and released with the matching `*_free`. Every fallible
//! function returns a [`RabiesStatus`]; on failure the message is available
//! from [`rabies_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rabies_core::integrate::simulate;
use rabies_core::model::N_STATE;
use rabies_core::optctl::{forward_backward_sweep, SweepConfig, SweepResult, Weights};
use rabies_core::repro::{dfe, endemic_eq, seeded_infection, spectral_r};
use rabies_core::{
    ControlConst, Error, ParamSet, StateVec, StrategyMask, TimeGrid, Trajectory,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RabiesStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

/// Model parameter set.
pub struct RabiesParams {
    inner: ParamSet,
}

/// Forward trajectory on a uniform grid.
pub struct RabiesTrajectory {
    inner: Trajectory,
}

/// Output of an optimal-control sweep.
pub struct RabiesSweep {
    inner: SweepResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RabiesStatus, msg: impl Into<String>) -> RabiesStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> RabiesStatus {
    let status = match e.exit_code() {
        2 => RabiesStatus::InvalidArgument,
        3 => RabiesStatus::Numeric,
        _ => RabiesStatus::Io,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`RabiesStatus::Panic`].
fn guard<F: FnOnce() -> RabiesStatus>(f: F) -> RabiesStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(RabiesStatus::Panic, "internal panic"),
    }
}

macro_rules! deref {
    ($p:expr, $what:literal) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(RabiesStatus::NullPointer, concat!($what, " is NULL")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr, $what:literal) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(RabiesStatus::NullPointer, concat!($what, " is NULL")),
        }
    };
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, RabiesStatus> {
    if s.is_null() {
        return Err(fail(RabiesStatus::NullPointer, "string argument is NULL"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(RabiesStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn read_controls(u: *const f64) -> Result<ControlConst, RabiesStatus> {
    if u.is_null() {
        return Ok(ControlConst::zero());
    }
    let a = std::slice::from_raw_parts(u, 4);
    let u = ControlConst::new(a[0], a[1], a[2], a[3]);
    u.validate().map_err(from_core)?;
    Ok(u)
}

unsafe fn read_state(y: *const f64) -> Result<StateVec, RabiesStatus> {
    if y.is_null() {
        return Err(fail(RabiesStatus::NullPointer, "state is NULL"));
    }
    let mut s = StateVec::zeros();
    s.0.copy_from_slice(std::slice::from_raw_parts(y, N_STATE));
    Ok(s)
}

unsafe fn write_state(y: &StateVec, out: *mut f64) -> RabiesStatus {
    if out.is_null() {
        return fail(RabiesStatus::NullPointer, "output buffer is NULL");
    }
    std::slice::from_raw_parts_mut(out, N_STATE).copy_from_slice(&y.0);
    RabiesStatus::Ok
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rabies_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of state compartments (12).
#[no_mangle]
pub extern "C" fn rabies_state_len() -> usize {
    N_STATE
}

/// Name of state compartment `i`, or NULL when out of range. Static string.
#[no_mangle]
pub extern "C" fn rabies_state_name(i: usize) -> *const c_char {
    const NAMES: [&CStr; N_STATE] = [
        c"S_H", c"E_H", c"I_H", c"R_H", c"S_F", c"E_F", c"I_F", c"S_D", c"E_D", c"I_D", c"R_D",
        c"M",
    ];
    NAMES.get(i).map_or(ptr::null(), |n| n.as_ptr())
}

/// New parameter set: preset 0 is the estimated set, 1 the baseline set.
/// Returns NULL for an unknown preset.
#[no_mangle]
pub extern "C" fn rabies_params_new(preset: u32) -> *mut RabiesParams {
    let inner = match preset {
        0 => ParamSet::estimated(),
        1 => ParamSet::baseline(),
        _ => {
            set_error(format!("unknown preset {preset}"));
            return ptr::null_mut();
        }
    };
    Box::into_raw(Box::new(RabiesParams { inner }))
}

/// Parameter set from a JSON object; missing keys take estimated values.
/// Returns NULL on error.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rabies_params_from_json(json: *const c_char) -> *mut RabiesParams {
    let text = match read_str(json) {
        Ok(t) => t,
        Err(_) => return ptr::null_mut(),
    };
    match ParamSet::from_json(text) {
        Ok(inner) => Box::into_raw(Box::new(RabiesParams { inner })),
        Err(e) => {
            from_core(e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `p` must come from a `rabies_params_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rabies_params_free(p: *mut RabiesParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rabies_params_set(
    p: *mut RabiesParams,
    name: *const c_char,
    value: f64,
) -> RabiesStatus {
    guard(|| {
        let p = deref_mut!(p, "params");
        let name = match read_str(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        match p.inner.set(name, value) {
            Ok(()) => RabiesStatus::Ok,
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `p` must be a live handle, `name` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rabies_params_get(
    p: *const RabiesParams,
    name: *const c_char,
    out: *mut f64,
) -> RabiesStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        let name = match read_str(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        match p.inner.get(name) {
            Some(v) => {
                *out = v;
                RabiesStatus::Ok
            }
            None => fail(
                RabiesStatus::InvalidArgument,
                format!("unknown parameter '{name}'"),
            ),
        }
    })
}

/// Checks positivity and the recruitment/death ordering.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rabies_params_validate(p: *const RabiesParams) -> RabiesStatus {
    guard(|| match deref!(p, "params").inner.validate() {
        Ok(()) => RabiesStatus::Ok,
        Err(e) => from_core(e),
    })
}

/// Closed-form effective reproduction number. `u` points to four control
/// values or is NULL for no control.
///
/// # Safety
/// `p` must be a live handle, `u` NULL or 4 readable doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rabies_effective_r(
    p: *const RabiesParams,
    u: *const f64,
    out: *mut f64,
) -> RabiesStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        let u = match read_controls(u) {
            Ok(u) => u,
            Err(s) => return s,
        };
        if let Err(e) = p.inner.validate() {
            return from_core(e);
        }
        *out = rabies_core::repro::effective_r(&p.inner, &u).Re;
        RabiesStatus::Ok
    })
}

/// Spectral radius of the next-generation matrix.
///
/// # Safety
/// As for [`rabies_effective_r`].
#[no_mangle]
pub unsafe extern "C" fn rabies_spectral_r(
    p: *const RabiesParams,
    u: *const f64,
    out: *mut f64,
) -> RabiesStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        let u = match read_controls(u) {
            Ok(u) => u,
            Err(s) => return s,
        };
        match spectral_r(&p.inner, &u) {
            Ok(r) => {
                *out = r;
                RabiesStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Disease-free equilibrium into `out[12]`.
///
/// # Safety
/// `p` must be a live handle and `out` 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rabies_dfe(p: *const RabiesParams, out: *mut f64) -> RabiesStatus {
    guard(|| write_state(&dfe(&deref!(p, "params").inner), out))
}

/// Default seeded initial state into `out[12]`.
///
/// # Safety
/// `p` must be a live handle and `out` 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rabies_seeded_state(p: *const RabiesParams, out: *mut f64) -> RabiesStatus {
    guard(|| write_state(&seeded_infection(&deref!(p, "params").inner), out))
}

/// Endemic equilibrium into `out[12]`; fails with `Numeric` when `Re < 1`.
///
/// # Safety
/// `p` must be a live handle, `u` NULL or 4 readable doubles, `out` 12
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rabies_endemic_eq(
    p: *const RabiesParams,
    u: *const f64,
    out: *mut f64,
) -> RabiesStatus {
    guard(|| {
        let p = deref!(p, "params");
        let u = match read_controls(u) {
            Ok(u) => u,
            Err(s) => return s,
        };
        match endemic_eq(&p.inner, &u) {
            Ok(y) => write_state(&y, out),
            Err(e) => from_core(e),
        }
    })
}

/// RK4 run from `y0[12]` over `[t0, tf]` in `n_steps` steps with constant
/// controls `u` (NULL for none). On success `*out` owns a new trajectory.
///
/// # Safety
/// Pointers must be valid as described; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rabies_simulate(
    p: *const RabiesParams,
    y0: *const f64,
    u: *const f64,
    t0: f64,
    tf: f64,
    n_steps: usize,
    out: *mut *mut RabiesTrajectory,
) -> RabiesStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        *out = ptr::null_mut();
        let (y0, u) = match (read_state(y0), read_controls(u)) {
            (Ok(y), Ok(u)) => (y, u),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let run = TimeGrid::new(t0, tf, n_steps).and_then(|g| simulate(&p.inner, u, &y0, &g));
        match run {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RabiesTrajectory { inner }));
                RabiesStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Number of stored nodes (`n_steps + 1`), or 0 for NULL.
///
/// # Safety
/// `tr` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rabies_trajectory_len(tr: *const RabiesTrajectory) -> usize {
    tr.as_ref().map_or(0, |t| t.inner.states.len())
}

/// Time and state at node `i`.
///
/// # Safety
/// `tr` must be a live handle; `t` NULL or writable; `state` 12 writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn rabies_trajectory_node(
    tr: *const RabiesTrajectory,
    i: usize,
    t: *mut f64,
    state: *mut f64,
) -> RabiesStatus {
    guard(|| {
        let tr = &deref!(tr, "trajectory").inner;
        let Some(y) = tr.states.get(i) else {
            return fail(
                RabiesStatus::InvalidArgument,
                format!("node {i} out of range ({} nodes)", tr.states.len()),
            );
        };
        if let Some(t) = t.as_mut() {
            *t = tr.grid.time(i);
        }
        write_state(y, state)
    })
}

/// # Safety
/// `tr` must come from [`rabies_simulate`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rabies_trajectory_free(tr: *mut RabiesTrajectory) {
    if !tr.is_null() {
        drop(Box::from_raw(tr));
    }
}

/// Optimal control by forward-backward sweep.
///
/// `mask_bits` enables `u1..u4` through bits 0..3. `weights` is NULL for
/// defaults or ten doubles `K1..K6, A1..A4`. Relaxation, tolerance and
/// iteration cap take their defaults.
///
/// # Safety
/// Pointers must be valid as described; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rabies_optimize(
    p: *const RabiesParams,
    y0: *const f64,
    t0: f64,
    tf: f64,
    n_steps: usize,
    mask_bits: u8,
    weights: *const f64,
    out: *mut *mut RabiesSweep,
) -> RabiesStatus {
    guard(|| {
        let p = deref!(p, "params");
        let out = deref_mut!(out, "out");
        *out = ptr::null_mut();
        let y0 = match read_state(y0) {
            Ok(y) => y,
            Err(s) => return s,
        };
        if mask_bits > 0b1111 {
            return fail(
                RabiesStatus::InvalidArgument,
                format!("mask {mask_bits:#b} has bits above u4"),
            );
        }
        let w = if weights.is_null() {
            Weights::default()
        } else {
            let a = std::slice::from_raw_parts(weights, 10);
            Weights {
                k1: a[0],
                k2: a[1],
                k3: a[2],
                k4: a[3],
                k5: a[4],
                k6: a[5],
                a1: a[6],
                a2: a[7],
                a3: a[8],
                a4: a[9],
            }
        };
        let mask = StrategyMask::from_bits(mask_bits);
        let run = TimeGrid::new(t0, tf, n_steps).and_then(|g| {
            forward_backward_sweep(&p.inner, &w, &y0, &g, mask, &SweepConfig::default())
        });
        match run {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RabiesSweep { inner }));
                RabiesStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Objective, iteration count and convergence flag of a sweep.
///
/// # Safety
/// `s` must be a live handle; outputs NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn rabies_sweep_summary(
    s: *const RabiesSweep,
    objective: *mut f64,
    iterations: *mut usize,
    converged: *mut bool,
) -> RabiesStatus {
    guard(|| {
        let s = &deref!(s, "sweep").inner;
        if let Some(j) = objective.as_mut() {
            *j = s.objective();
        }
        if let Some(it) = iterations.as_mut() {
            *it = s.iterations;
        }
        if let Some(c) = converged.as_mut() {
            *c = s.converged;
        }
        RabiesStatus::Ok
    })
}

/// Number of grid nodes in a sweep, or 0 for NULL.
///
/// # Safety
/// `s` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rabies_sweep_len(s: *const RabiesSweep) -> usize {
    s.as_ref().map_or(0, |s| s.inner.states.states.len())
}

/// Time, state and controls at node `i`. Any output may be NULL.
///
/// # Safety
/// `s` must be a live handle; `state` NULL or 12 writable doubles;
/// `controls` NULL or 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rabies_sweep_node(
    s: *const RabiesSweep,
    i: usize,
    t: *mut f64,
    state: *mut f64,
    controls: *mut f64,
) -> RabiesStatus {
    guard(|| {
        let s = &deref!(s, "sweep").inner;
        let n = s.states.states.len();
        if i >= n {
            return fail(
                RabiesStatus::InvalidArgument,
                format!("node {i} out of range ({n} nodes)"),
            );
        }
        if let Some(t) = t.as_mut() {
            *t = s.states.grid.time(i);
        }
        if !state.is_null() {
            write_state(&s.states.states[i], state);
        }
        if !controls.is_null() {
            std::slice::from_raw_parts_mut(controls, 4)
                .copy_from_slice(&s.controls.values[i].to_array());
        }
        RabiesStatus::Ok
    })
}

/// # Safety
/// `s` must come from [`rabies_optimize`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rabies_sweep_free(s: *mut RabiesSweep) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
