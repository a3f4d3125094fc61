//! C interface to the regulator toolkit.
//!
//! Scenarios and simulation results live behind opaque handles that the
//! caller owns and releases through the matching `_free` function. Strings
//! returned as `char *` are NUL terminated UTF-8 allocated here and given
//! back through [`reg_string_free`]; the version and error strings are the
//! two exceptions and must not be freed. A failing call returns null or a
//! nonzero [`RegStatus`] and leaves a message readable through
//! [`reg_last_error`] until the next call on the same thread.

use regulib::cli::{
    build_scenario, overlay_fragment, parameter_echo, parse_analyses, probe_document,
    run_analyses, verify_document, CliError, RunConfig,
};
use regulib::closed_loop::{simulate, Scenario, SimResult};
use regulib::scenarios;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Outcome of a call that reports through a status code.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input was rejected; reg_last_error has the reason.
    ConfigError = 3,
    /// The library failed internally; reg_last_error has the reason.
    Panicked = 4,
}

/// A registry scenario plus the overrides applied to it so far.
pub struct RegScenario {
    cfg: RunConfig,
    sc: Scenario,
}

/// A finished closed-loop run: the scenario that produced it and the full
/// trajectory on the fixed grid.
pub struct RegSim {
    sc: Scenario,
    out: SimResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    let c = CString::new(text).expect("nul bytes were replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| (*s).to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown cause".to_string())
}

/// Runs a fallible body, routing errors and panics into the thread error
/// slot. Success clears the slot.
fn catch<T>(what: &str, body: impl FnOnce() -> Result<T, CliError>) -> Option<T> {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(v)) => {
            clear_last_error();
            Some(v)
        }
        Ok(Err(e)) => {
            set_last_error(e);
            None
        }
        Err(payload) => {
            set_last_error(format!("panic in {what}: {}", panic_text(payload.as_ref())));
            None
        }
    }
}

fn catch_status(what: &str, body: impl FnOnce() -> Result<(), CliError>) -> RegStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_last_error();
            RegStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(e);
            RegStatus::ConfigError
        }
        Err(payload) => {
            set_last_error(format!("panic in {what}: {}", panic_text(payload.as_ref())));
            RegStatus::Panicked
        }
    }
}

/// Borrows a C string argument as UTF-8, reporting the failure mode.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, RegStatus> {
    if ptr.is_null() {
        set_last_error(format!("{what} is null"));
        return Err(RegStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_last_error(format!("{what} is not valid UTF-8"));
            Err(RegStatus::InvalidUtf8)
        }
    }
}

fn owned_c_string(text: String) -> *mut c_char {
    let cleaned = if text.contains('\0') { text.replace('\0', " ") } else { text };
    CString::new(cleaned).expect("nul bytes were replaced").into_raw()
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn reg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread, or null when
/// the last call succeeded. Valid until the next library call on the same
/// thread. Do not free.
#[no_mangle]
pub extern "C" fn reg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Known scenario names and one-line summaries as a JSON array of
/// {"name", "summary"} objects. Free with reg_string_free.
#[no_mangle]
pub extern "C" fn reg_registry_json() -> *mut c_char {
    let rows: Vec<serde_json::Value> = scenarios::registry()
        .iter()
        .map(|s| serde_json::json!({ "name": s.name, "summary": s.summary }))
        .collect();
    clear_last_error();
    owned_c_string(serde_json::Value::Array(rows).to_string())
}

/// Builds a scenario from its registry name, or returns null when the name
/// is unknown. Free with reg_scenario_free.
///
/// # Safety
/// `name` must be null or point to a NUL terminated string that stays valid
/// for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn reg_scenario_new(name: *const c_char) -> *mut RegScenario {
    let name = match utf8_arg(name, "scenario name") {
        Ok(s) => s.to_string(),
        Err(_) => return ptr::null_mut(),
    };
    let cfg = RunConfig { scenario: Some(name), ..RunConfig::default() };
    match catch("scenario construction", || build_scenario(&cfg)) {
        Some(sc) => Box::into_raw(Box::new(RegScenario { cfg, sc })),
        None => ptr::null_mut(),
    }
}

/// Applies one override document in the run-config grammar, for example
/// "k = 2.0" or "w0 = [1.0, 0.0]". A document may set several keys; later
/// calls overlay earlier ones field by field, and the rebuilt scenario is
/// validated before the handle changes, so a rejected document leaves the
/// handle as it was.
///
/// # Safety
/// `sc` must be null or a live pointer from reg_scenario_new; `assignment`
/// must be null or a NUL terminated string valid for the call.
#[no_mangle]
pub unsafe extern "C" fn reg_scenario_set(
    sc: *mut RegScenario,
    assignment: *const c_char,
) -> RegStatus {
    let Some(handle) = sc.as_mut() else {
        set_last_error("scenario handle is null");
        return RegStatus::NullArgument;
    };
    let text = match utf8_arg(assignment, "override document") {
        Ok(s) => s,
        Err(status) => return status,
    };
    catch_status("scenario override", || {
        let cfg = overlay_fragment(&handle.cfg, text)?;
        let rebuilt = build_scenario(&cfg)?;
        handle.cfg = cfg;
        handle.sc = rebuilt;
        Ok(())
    })
}

/// Registry name behind the handle. Free with reg_string_free.
///
/// # Safety
/// `sc` must be null or a live pointer from reg_scenario_new.
#[no_mangle]
pub unsafe extern "C" fn reg_scenario_name(sc: *const RegScenario) -> *mut c_char {
    match sc.as_ref() {
        Some(handle) => {
            clear_last_error();
            owned_c_string(handle.sc.name.clone())
        }
        None => {
            set_last_error("scenario handle is null");
            ptr::null_mut()
        }
    }
}

/// Every effective parameter after defaults and overrides, as JSON; a run
/// is reproducible from this echo alone. Free with reg_string_free.
///
/// # Safety
/// `sc` must be null or a live pointer from reg_scenario_new.
#[no_mangle]
pub unsafe extern "C" fn reg_scenario_params_json(sc: *const RegScenario) -> *mut c_char {
    match sc.as_ref() {
        Some(handle) => {
            clear_last_error();
            owned_c_string(parameter_echo(&handle.sc).to_string())
        }
        None => {
            set_last_error("scenario handle is null");
            ptr::null_mut()
        }
    }
}

/// Releases a scenario handle. Null is allowed.
///
/// # Safety
/// `sc` must be null or a pointer from reg_scenario_new that has not been
/// freed already; it is invalid after the call.
#[no_mangle]
pub unsafe extern "C" fn reg_scenario_free(sc: *mut RegScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Integrates the closed loop over the scenario's fixed grid. Divergence is
/// data on the returned handle, not a failure; null means the setup was
/// rejected before integration. Free with reg_sim_free.
///
/// # Safety
/// `sc` must be null or a live pointer from reg_scenario_new.
#[no_mangle]
pub unsafe extern "C" fn reg_simulate(sc: *const RegScenario) -> *mut RegSim {
    let Some(handle) = sc.as_ref() else {
        set_last_error("scenario handle is null");
        return ptr::null_mut();
    };
    match catch("simulation", || Ok(simulate(&handle.sc)?)) {
        Some(out) => Box::into_raw(Box::new(RegSim { sc: handle.sc.clone(), out })),
        None => ptr::null_mut(),
    }
}

/// Number of grid samples, zero for a null handle.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_len(sim: *const RegSim) -> usize {
    sim.as_ref().map_or(0, |s| s.out.trajectory.len())
}

/// State dimension of every sample, zero for a null handle.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_dim(sim: *const RegSim) -> usize {
    sim.as_ref().map_or(0, |s| s.out.trajectory.dim)
}

/// Grid times, length reg_sim_len. Borrowed from the handle; valid while
/// the handle lives, do not free.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_times(sim: *const RegSim) -> *const f64 {
    sim.as_ref().map_or(ptr::null(), |s| s.out.trajectory.times.as_ptr())
}

/// One state sample of length reg_sim_dim, or null when the index is out of
/// range. Borrowed from the handle; valid while the handle lives, do not
/// free.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_state(sim: *const RegSim, idx: usize) -> *const f64 {
    match sim.as_ref().and_then(|s| s.out.trajectory.states.get(idx)) {
        Some(row) => row.as_ptr(),
        None => ptr::null(),
    }
}

/// Comma separated component labels in state order, for example
/// "rho_1,w_1,w_2,...". Free with reg_string_free.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_labels(sim: *const RegSim) -> *mut c_char {
    match sim.as_ref() {
        Some(s) => {
            clear_last_error();
            owned_c_string(s.out.layout.labels().join(","))
        }
        None => {
            set_last_error("simulation handle is null");
            ptr::null_mut()
        }
    }
}

/// True when the run tripped the divergence guard and stopped early.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_diverged(sim: *const RegSim) -> bool {
    sim.as_ref().map_or(false, |s| s.out.diverged.is_some())
}

/// First grid time at which the state sup norm crossed the divergence
/// bound, NaN for a run that completed.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_divergence_time(sim: *const RegSim) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.out.diverged.map_or(f64::NAN, |d| d.t))
}

/// Scalar run metrics (sup norms, terminal error, settle time, parameter
/// error, dead-zone activity, regulated flag) as JSON. Free with
/// reg_string_free.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_metrics_json(sim: *const RegSim) -> *mut c_char {
    let Some(s) = sim.as_ref() else {
        set_last_error("simulation handle is null");
        return ptr::null_mut();
    };
    match serde_json::to_string(&s.out.metrics) {
        Ok(text) => {
            clear_last_error();
            owned_c_string(text)
        }
        Err(e) => {
            set_last_error(format!("metrics serialization: {e}"));
            ptr::null_mut()
        }
    }
}

/// Builds the named report blocks ("pe", "graph", "limit_set", "decay",
/// "lyapunov", comma separated) anchored at the run's terminal state and
/// returns them as one JSON object. Fails on unknown names and on a
/// diverged run, whose terminal state anchors nothing. Free with
/// reg_string_free.
///
/// # Safety
/// `sim` must be null or a live pointer from reg_simulate; `analyses` must
/// be null or a NUL terminated string valid for the call.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_analyses_json(
    sim: *const RegSim,
    analyses: *const c_char,
) -> *mut c_char {
    let Some(handle) = sim.as_ref() else {
        set_last_error("simulation handle is null");
        return ptr::null_mut();
    };
    let list = match utf8_arg(analyses, "analysis list") {
        Ok(s) => s,
        Err(_) => return ptr::null_mut(),
    };
    let value = catch("analysis", || {
        if handle.out.diverged.is_some() {
            return Err(CliError::Config(
                "run diverged; analyses need a completed run".into(),
            ));
        }
        let names: Vec<String> = list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let kinds = parse_analyses(&names)?;
        run_analyses(&handle.out, &handle.sc, &kinds)
    });
    match value {
        Some(v) => owned_c_string(v.to_string()),
        None => ptr::null_mut(),
    }
}

/// Releases a simulation handle and every pointer borrowed from it. Null is
/// allowed.
///
/// # Safety
/// `sim` must be null or a pointer from reg_simulate that has not been
/// freed already; it and all borrowed pointers are invalid after the call.
#[no_mangle]
pub unsafe extern "C" fn reg_sim_free(sim: *mut RegSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs the structural check suite (transform identities on random gains,
/// immersion residuals on attractor samples, excitation, graph invariance)
/// and returns the report as JSON. `pass`, when non-null, receives the
/// overall verdict; a failed check is data, null means the suite could not
/// run. Free with reg_string_free.
///
/// # Safety
/// `sc` must be null or a live pointer from reg_scenario_new; `pass` must
/// be null or point to writable memory for one bool.
#[no_mangle]
pub unsafe extern "C" fn reg_verify_json(sc: *const RegScenario, pass: *mut bool) -> *mut c_char {
    let Some(handle) = sc.as_ref() else {
        set_last_error("scenario handle is null");
        return ptr::null_mut();
    };
    match catch("verification", || verify_document(&handle.sc)) {
        Some((doc, ok)) => {
            if !pass.is_null() {
                *pass = ok;
            }
            owned_c_string(doc.to_string())
        }
        None => ptr::null_mut(),
    }
}

/// Doubles the named gain ("k", "lambda", "g") from `floor` until the loop
/// settles, and returns the trial ladder as JSON. A floor at or below zero
/// selects the knob default. `exhausted`, when non-null, receives true when
/// no rung passed; exhaustion is data, null means the probe could not run.
/// Free with reg_string_free.
///
/// # Safety
/// `sc` must be null or a live pointer from reg_scenario_new; `knob` must
/// be null or a NUL terminated string valid for the call; `exhausted` must
/// be null or point to writable memory for one bool.
#[no_mangle]
pub unsafe extern "C" fn reg_probe_json(
    sc: *const RegScenario,
    knob: *const c_char,
    floor: f64,
    max_doublings: u32,
    exhausted: *mut bool,
) -> *mut c_char {
    let Some(handle) = sc.as_ref() else {
        set_last_error("scenario handle is null");
        return ptr::null_mut();
    };
    let knob_name = match utf8_arg(knob, "gain name") {
        Ok(s) => s,
        Err(_) => return ptr::null_mut(),
    };
    let floor = if floor > 0.0 { Some(floor) } else { None };
    match catch("gain probe", || {
        probe_document(&handle.sc, knob_name, floor, max_doublings as usize)
    }) {
        Some((doc, ran_out)) => {
            if !exhausted.is_null() {
                *exhausted = ran_out;
            }
            owned_c_string(doc.to_string())
        }
        None => ptr::null_mut(),
    }
}

/// Releases a string this library returned as owned. Null is allowed.
///
/// # Safety
/// `s` must be null or an owned string pointer from this library, not yet
/// freed and unmodified; it is invalid after the call.
#[no_mangle]
pub unsafe extern "C" fn reg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
