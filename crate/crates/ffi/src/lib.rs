//! C interface. Scenarios and traces are opaque handles owned by the caller
//! and released with their `_free` function. Every call returns a
//! [`SacbfStatus`]; the message of the last failure on the calling thread is
//! available through [`sacbf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::DVector;
use sacbf_core::dynamics::{eval_field, make_unicycle, SystemModel};
use sacbf_core::invariance_bounds::comparison_lower_bound;
use sacbf_core::output::write_run;
use sacbf_core::scenario::{load_scenario, parse_scenario, ScenarioConfig};
use sacbf_core::simulator::{run_scenario, ControllerKind, StepStatus, TraceLog};
use sacbf_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SacbfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Config = 4,
    Io = 5,
    Simulation = 6,
    OutOfRange = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SacbfController {
    Hocbf = 0,
    Sacbf = 1,
    RSacbf = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SacbfStepStatus {
    Optimal = 0,
    Infeasible = 1,
    SetExit = 2,
}

/// Run-level counters of a trace.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SacbfSummary {
    pub steps: usize,
    pub optimal_steps: usize,
    pub infeasible_steps: usize,
    pub set_exit_steps: usize,
    pub dominance_violations: usize,
    pub tube_violations: usize,
    pub audit_violations: usize,
}

/// Opaque scenario handle.
pub struct SacbfScenario(ScenarioConfig);

/// Opaque trace handle.
pub struct SacbfTrace(TraceLog);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> SacbfStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => SacbfStatus::InvalidArgument,
        Error::Domain(_) | Error::OutOfWindow { .. } => SacbfStatus::Domain,
        Error::Config(_) => SacbfStatus::Config,
        Error::Io(_) => SacbfStatus::Io,
        _ => SacbfStatus::Simulation,
    }
}

struct Fail(SacbfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: SacbfStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SacbfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SacbfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SacbfStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| fail(SacbfStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(SacbfStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(SacbfStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            SacbfStatus::InvalidArgument,
            format!("`{what}` is not UTF-8"),
        )
    })
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(fail(SacbfStatus::NullPointer, format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(SacbfStatus::NullPointer, "`out` is null"));
    }
    if len < src.len() {
        return Err(fail(
            SacbfStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread (empty if none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sacbf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sacbf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Lower envelope at `dt` of `psi' >= -lambda psi^eta` started from `psi0`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sacbf_comparison_lower_bound(
    psi0: f64,
    lambda: f64,
    eta: f64,
    dt: f64,
    out: *mut f64,
) -> SacbfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = comparison_lower_bound(psi0, lambda, eta, dt)?;
        Ok(())
    })
}

/// Unicycle vector field `f(x) + g u` for `state = (x, y, theta, v)` and
/// `input = (turn rate, acceleration)`; writes four values to `out`.
///
/// # Safety
/// `state` and `out` must point to four `double`s, `input` to two.
#[no_mangle]
pub unsafe extern "C" fn sacbf_unicycle_field(
    state: *const f64,
    input: *const f64,
    out: *mut f64,
) -> SacbfStatus {
    guard(|| {
        let model = make_unicycle();
        let x = DVector::from_column_slice(slice(state, model.state_dim(), "state")?);
        let u = DVector::from_column_slice(slice(input, model.input_dim(), "input")?);
        let f = eval_field(&model, &x, &u, 0.0)?;
        copy_out(f.as_slice(), out, model.state_dim())
    })
}

/// Reads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sacbf_scenario_load(
    path: *const c_char,
    out: *mut *mut SacbfScenario,
) -> SacbfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let path = c_str(path, "path")?;
        let config = load_scenario(Path::new(path))?;
        *out = Box::into_raw(Box::new(SacbfScenario(config)));
        Ok(())
    })
}

/// Parses and validates a scenario document held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sacbf_scenario_parse(
    text: *const c_char,
    out: *mut *mut SacbfScenario,
) -> SacbfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let config = parse_scenario(c_str(text, "text")?)?;
        *out = Box::into_raw(Box::new(SacbfScenario(config)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sacbf_scenario_free(scenario: *mut SacbfScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sacbf_scenario_set_heading(
    scenario: *mut SacbfScenario,
    heading: f64,
) -> SacbfStatus {
    guard(|| {
        let s = non_null_mut(scenario, "scenario")?;
        s.0 = s.0.clone().with_heading(heading)?;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sacbf_scenario_set_controller(
    scenario: *mut SacbfScenario,
    controller: SacbfController,
) -> SacbfStatus {
    guard(|| {
        let s = non_null_mut(scenario, "scenario")?;
        let kind = match controller {
            SacbfController::Hocbf => ControllerKind::Hocbf,
            SacbfController::Sacbf => ControllerKind::Sacbf,
            SacbfController::RSacbf => ControllerKind::RSacbf,
        };
        s.0 = s.0.clone().with_controller(kind);
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sacbf_scenario_set_seed(
    scenario: *mut SacbfScenario,
    seed: u64,
) -> SacbfStatus {
    guard(|| {
        let s = non_null_mut(scenario, "scenario")?;
        s.0 = s.0.clone().with_seed(seed);
        Ok(())
    })
}

/// Runs the closed loop for the scenario's horizon.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sacbf_simulate(
    scenario: *const SacbfScenario,
    out: *mut *mut SacbfTrace,
) -> SacbfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let s = non_null(scenario, "scenario")?;
        let trace = run_scenario(&s.0)?;
        *out = Box::into_raw(Box::new(SacbfTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sacbf_trace_free(trace: *mut SacbfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sacbf_trace_summary(
    trace: *const SacbfTrace,
    out: *mut SacbfSummary,
) -> SacbfStatus {
    guard(|| {
        let t = non_null(trace, "trace")?;
        let out = non_null_mut(out, "out")?;
        let s = &t.0.summary;
        *out = SacbfSummary {
            steps: s.steps,
            optimal_steps: s.optimal_steps,
            infeasible_steps: s.infeasible_steps,
            set_exit_steps: s.set_exit_steps,
            dominance_violations: s.dominance_violations,
            tube_violations: s.tube_violations,
            audit_violations: s.audit_violations,
        };
        Ok(())
    })
}

unsafe fn step_of<'a>(
    trace: *const SacbfTrace,
    k: usize,
) -> Result<&'a sacbf_core::simulator::StepRecord, Fail> {
    let t = non_null(trace, "trace")?;
    t.0.steps.get(k).ok_or_else(|| {
        fail(
            SacbfStatus::OutOfRange,
            format!("step {k} of {}", t.0.steps.len()),
        )
    })
}

/// Sampling time, state and held input of step `k`. `state` needs room for the
/// model's state dimension, `input` for its input dimension.
///
/// # Safety
/// `trace` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sacbf_trace_step(
    trace: *const SacbfTrace,
    k: usize,
    t: *mut f64,
    state: *mut f64,
    state_len: usize,
    input: *mut f64,
    input_len: usize,
    status: *mut SacbfStepStatus,
) -> SacbfStatus {
    guard(|| {
        let rec = step_of(trace, k)?;
        *non_null_mut(t, "t")? = rec.t;
        copy_out(rec.state.as_slice(), state, state_len)?;
        copy_out(rec.input.as_slice(), input, input_len)?;
        *non_null_mut(status, "status")? = match rec.status {
            StepStatus::Optimal => SacbfStepStatus::Optimal,
            StepStatus::Infeasible => SacbfStepStatus::Infeasible,
            StepStatus::SetExit => SacbfStepStatus::SetExit,
        };
        Ok(())
    })
}

/// Number of barrier chains in the trace.
///
/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sacbf_trace_chain_count(
    trace: *const SacbfTrace,
    out: *mut usize,
) -> SacbfStatus {
    guard(|| {
        *non_null_mut(out, "out")? = non_null(trace, "trace")?.0.chains.len();
        Ok(())
    })
}

/// Dense-grid minimum of `psi_0` and the reach time (NaN when the chain is not
/// a reach chain or never reached its region) of chain `i`.
///
/// # Safety
/// `trace` must be a live handle; `min_psi0` and `reach_time` writable.
#[no_mangle]
pub unsafe extern "C" fn sacbf_trace_chain_result(
    trace: *const SacbfTrace,
    i: usize,
    min_psi0: *mut f64,
    reach_time: *mut f64,
) -> SacbfStatus {
    guard(|| {
        let t = non_null(trace, "trace")?;
        let c = t.0.summary.chains.get(i).ok_or_else(|| {
            fail(
                SacbfStatus::OutOfRange,
                format!("chain {i} of {}", t.0.summary.chains.len()),
            )
        })?;
        *non_null_mut(min_psi0, "min_psi0")? = c.min_psi0();
        *non_null_mut(reach_time, "reach_time")? = c.reach_time.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Writes the trace, audit and summary files into `dir`.
///
/// # Safety
/// `trace` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sacbf_trace_write(
    trace: *const SacbfTrace,
    dir: *const c_char,
    figures: bool,
) -> SacbfStatus {
    guard(|| {
        let t = non_null(trace, "trace")?;
        write_run(&t.0, Path::new(c_str(dir, "dir")?), figures)?;
        Ok(())
    })
}
