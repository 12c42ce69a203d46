//! C ABI over the `llmslice` simulator.
//!
//! Scenarios and runs are opaque handles owned by the caller and released with
//! the matching `*_free` function. Every fallible call returns an
//! [`LlmsliceStatus`]; on failure the message is available from
//! [`llmslice_last_error_message`] on the same thread. Strings returned through
//! out-parameters are released with [`llmslice_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use llmslice::cli::{compare_scenario, CliError};
use llmslice::engine::{run, RunOptions, RunOutput};
use llmslice::mac::ModeKind;
use llmslice::metrics::{deliveries_csv, summary_json, RunSummary};
use llmslice::radio;
use llmslice::scenario::{load_scenario, parse_scenario, Scenario};
use llmslice::slicectl::load_permissions;

/// Use the mode named in the scenario.
pub const LLMSLICE_MODE_SCENARIO: i32 = 0;
pub const LLMSLICE_MODE_SHARED: i32 = 1;
pub const LLMSLICE_MODE_STATIC: i32 = 2;
pub const LLMSLICE_MODE_DYNAMIC: i32 = 3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmsliceStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Scenario or permissions rejected.
    ConfigError = 4,
    /// The simulation aborted.
    RuntimeError = 5,
    /// A metric is undefined (no streams started, zero baseline).
    MetricsError = 6,
    IoError = 7,
    Panic = 8,
}

/// Headline metrics of one run or one seed-averaged mode. Latencies are NaN
/// when no response completed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlmsliceMetrics {
    pub mean_completion_latency_ms: f64,
    pub mean_first_byte_latency_ms: f64,
    pub utilization: f64,
    pub stability: f64,
    pub requests: u64,
    pub started: u64,
    pub completed: u64,
    pub aborted: u64,
    pub rejected: u64,
}

/// Improvements are percentages rounded to one decimal.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlmsliceComparison {
    pub baseline: LlmsliceMetrics,
    pub treatment: LlmsliceMetrics,
    pub latency_improvement_pct: f64,
    pub utilization_improvement_pct: f64,
    pub stability_improvement_pct: f64,
}

/// Opaque parsed scenario.
pub struct LlmsliceScenario {
    inner: Scenario,
}

/// Opaque finished run.
pub struct LlmsliceRun {
    output: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type FfiResult<T> = Result<T, LlmsliceStatus>;

fn fail<T>(status: LlmsliceStatus, msg: impl std::fmt::Display) -> FfiResult<T> {
    set_error(msg);
    Err(status)
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> FfiResult<()>) -> LlmsliceStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LlmsliceStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            LlmsliceStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(LlmsliceStatus::NullArgument, format!("{name} is null"));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s),
        Err(e) => fail(LlmsliceStatus::InvalidUtf8, format!("{name}: {e}")),
    }
}

fn mode_arg(mode: i32) -> FfiResult<Option<ModeKind>> {
    match mode {
        LLMSLICE_MODE_SCENARIO => Ok(None),
        LLMSLICE_MODE_SHARED => Ok(Some(ModeKind::Shared)),
        LLMSLICE_MODE_STATIC => Ok(Some(ModeKind::Static)),
        LLMSLICE_MODE_DYNAMIC => Ok(Some(ModeKind::Dynamic)),
        other => fail(LlmsliceStatus::InvalidArgument, format!("unknown mode {other}")),
    }
}

fn cli_status(e: &CliError) -> LlmsliceStatus {
    match e {
        CliError::Config(_) => LlmsliceStatus::ConfigError,
        CliError::Run(_) => LlmsliceStatus::RuntimeError,
        CliError::Metrics(_) => LlmsliceStatus::MetricsError,
        CliError::Io(..) => LlmsliceStatus::IoError,
    }
}

fn metrics_of(s: &RunSummary) -> LlmsliceMetrics {
    LlmsliceMetrics {
        mean_completion_latency_ms: s.mean_completion_latency_ms.unwrap_or(f64::NAN),
        mean_first_byte_latency_ms: s.mean_first_byte_latency_ms.unwrap_or(f64::NAN),
        utilization: s.utilization,
        stability: s.stability,
        requests: s.requests,
        started: s.started,
        completed: s.completed,
        aborted: s.aborted,
        rejected: s.rejected,
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return fail(LlmsliceStatus::NullArgument, "out is null");
    }
    // SAFETY: caller guarantees `out` points to writable storage for a T.
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = match CString::new(s) {
        Ok(c) => c,
        Err(e) => return fail(LlmsliceStatus::RuntimeError, e),
    };
    write_out(out, c.into_raw())
}

fn to_handle(s: Scenario) -> *mut LlmsliceScenario {
    Box::into_raw(Box::new(LlmsliceScenario { inner: s }))
}

/// Parses a scenario document. `permissions_csv` may be null, in which case a
/// scenario without a `permissions` key allows every UE its listed services.
///
/// # Safety
/// `json` and (if non-null) `permissions_csv` must be NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_scenario_parse(
    json: *const c_char,
    permissions_csv: *const c_char,
    out: *mut *mut LlmsliceScenario,
) -> LlmsliceStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let mut s = match parse_scenario(text) {
            Ok(s) => s,
            Err(e) => return fail(LlmsliceStatus::ConfigError, e),
        };
        if !permissions_csv.is_null() {
            let csv = str_arg(permissions_csv, "permissions_csv")?;
            match load_permissions(csv) {
                Ok(db) => s.attach_permissions(db),
                Err(e) => return fail(LlmsliceStatus::ConfigError, e),
            }
        }
        write_out(out, to_handle(s))
    })
}

/// Loads a scenario file, resolving its permissions file relative to it.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_scenario_load(
    path: *const c_char,
    out: *mut *mut LlmsliceScenario,
) -> LlmsliceStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        match load_scenario(Path::new(p)) {
            Ok(s) => write_out(out, to_handle(s)),
            Err(llmslice::ConfigError::Io { path, source }) => {
                fail(LlmsliceStatus::IoError, format!("{}: {source}", path.display()))
            }
            Err(e) => fail(LlmsliceStatus::ConfigError, e),
        }
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llmslice_scenario_free(scenario: *mut LlmsliceScenario) {
    if !scenario.is_null() {
        // SAFETY: handle was produced by Box::into_raw in this crate.
        drop(Box::from_raw(scenario));
    }
}

/// Runs one seed. `mode` is one of the `LLMSLICE_MODE_*` constants.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_run(
    scenario: *const LlmsliceScenario,
    seed: u64,
    mode: i32,
    out: *mut *mut LlmsliceRun,
) -> LlmsliceStatus {
    guard(|| {
        let Some(sc) = scenario.as_ref() else {
            return fail(LlmsliceStatus::NullArgument, "scenario is null");
        };
        let s = match mode_arg(mode)? {
            Some(m) => match sc.inner.with_mode(m) {
                Ok(s) => s,
                Err(e) => return fail(LlmsliceStatus::ConfigError, e),
            },
            None => sc.inner.clone(),
        };
        match run(&s, seed, &RunOptions::default()) {
            Ok(output) => write_out(out, Box::into_raw(Box::new(LlmsliceRun { output }))),
            Err(e) => fail(LlmsliceStatus::RuntimeError, e),
        }
    })
}

/// # Safety
/// `run` must be null or a handle from [`llmslice_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llmslice_run_free(run: *mut LlmsliceRun) {
    if !run.is_null() {
        // SAFETY: handle was produced by Box::into_raw in this crate.
        drop(Box::from_raw(run));
    }
}

unsafe fn run_ref<'a>(run: *const LlmsliceRun) -> FfiResult<&'a LlmsliceRun> {
    match run.as_ref() {
        Some(r) => Ok(r),
        None => fail(LlmsliceStatus::NullArgument, "run is null"),
    }
}

fn summary_of(r: &LlmsliceRun) -> FfiResult<RunSummary> {
    r.output
        .summary(false)
        .or_else(|e| fail(LlmsliceStatus::MetricsError, e))
}

/// # Safety
/// `run` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_run_metrics(run: *const LlmsliceRun, out: *mut LlmsliceMetrics) -> LlmsliceStatus {
    guard(|| {
        let s = summary_of(run_ref(run)?)?;
        write_out(out, metrics_of(&s))
    })
}

/// The flat `summary.json` document.
///
/// # Safety
/// `run` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_run_summary_json(run: *const LlmsliceRun, out: *mut *mut c_char) -> LlmsliceStatus {
    guard(|| {
        let s = summary_of(run_ref(run)?)?;
        write_string(out, summary_json(&s))
    })
}

/// The `deliveries.csv` document.
///
/// # Safety
/// `run` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_run_deliveries_csv(run: *const LlmsliceRun, out: *mut *mut c_char) -> LlmsliceStatus {
    guard(|| {
        let r = run_ref(run)?;
        write_string(out, deliveries_csv(&r.output.deliveries))
    })
}

/// Hex SHA-256 of the run's event log.
///
/// # Safety
/// `run` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_run_trace_digest(run: *const LlmsliceRun, out: *mut *mut c_char) -> LlmsliceStatus {
    guard(|| {
        let r = run_ref(run)?;
        write_string(out, r.output.trace.digest.clone())
    })
}

/// Runs both modes over `seeds` and compares the seed-averaged summaries.
///
/// # Safety
/// `scenario` must be a live handle, `seeds` must point to `n_seeds` values
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_compare(
    scenario: *const LlmsliceScenario,
    baseline: i32,
    treatment: i32,
    seeds: *const u64,
    n_seeds: usize,
    out: *mut LlmsliceComparison,
) -> LlmsliceStatus {
    guard(|| {
        let Some(sc) = scenario.as_ref() else {
            return fail(LlmsliceStatus::NullArgument, "scenario is null");
        };
        if seeds.is_null() || n_seeds == 0 {
            return fail(LlmsliceStatus::InvalidArgument, "at least one seed is required");
        }
        // SAFETY: caller guarantees `seeds[0..n_seeds]` is readable.
        let seeds = std::slice::from_raw_parts(seeds, n_seeds);
        let mode_or_scenario = |m: i32| -> FfiResult<ModeKind> { Ok(mode_arg(m)?.unwrap_or(sc.inner.mode.kind)) };
        let (b, t) = (mode_or_scenario(baseline)?, mode_or_scenario(treatment)?);
        match compare_scenario(&sc.inner, b, t, seeds) {
            Ok(r) => write_out(
                out,
                LlmsliceComparison {
                    baseline: metrics_of(&r.baseline),
                    treatment: metrics_of(&r.treatment),
                    latency_improvement_pct: r.latency_improvement_pct(),
                    utilization_improvement_pct: r.utilization_improvement_pct(),
                    stability_improvement_pct: r.stability_improvement_pct(),
                },
            ),
            Err(e) => fail(cli_status(&e), e),
        }
    })
}

/// Downlink bytes one PRB carries per TTI at `cqi`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmslice_bytes_per_prb(cqi: u8, out: *mut u32) -> LlmsliceStatus {
    guard(|| match radio::bytes_per_prb(cqi) {
        Ok(b) => write_out(out, b),
        Err(e) => fail(LlmsliceStatus::InvalidArgument, e),
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llmslice_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw in this crate.
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn llmslice_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn llmslice_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}
