//! C ABI over the estimation pipeline: configs go in as JSON strings,
//! results come back as opaque report handles with scalar accessors plus a
//! full JSON rendering. Every entry point catches panics and reports through
//! status codes; string and handle ownership crosses the boundary only
//! through the matching `_free` functions.
//!
//! Status codes: 0 success, 2 config error, 3 data error, 4 numerical
//! failure, 5 invalid argument (null pointer or malformed UTF-8), 1 internal
//! panic. The most recent error message is kept per thread and read back
//! with `btshift_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use btshift::cli::{cmd_estimate, cmd_marginal_bt, cmd_simulate, EstimateConfig, RankingReport, SimulateConfig};
use btshift::ErrorKind;

pub const BTSHIFT_OK: i32 = 0;
pub const BTSHIFT_ERR_PANIC: i32 = 1;
pub const BTSHIFT_ERR_CONFIG: i32 = 2;
pub const BTSHIFT_ERR_DATA: i32 = 3;
pub const BTSHIFT_ERR_NUMERICAL: i32 = 4;
pub const BTSHIFT_ERR_ARGUMENT: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => BTSHIFT_ERR_CONFIG,
        ErrorKind::Data => BTSHIFT_ERR_DATA,
        ErrorKind::Numerical => BTSHIFT_ERR_NUMERICAL,
    }
}

/// Opaque ranking-report handle.
pub struct BtshiftReport {
    report: RankingReport,
    names: Vec<CString>,
}

unsafe fn read_utf8<'a>(ptr: *const c_char) -> Result<&'a str, i32> {
    if ptr.is_null() {
        set_error("null pointer argument".into());
        return Err(BTSHIFT_ERR_ARGUMENT);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".into());
        BTSHIFT_ERR_ARGUMENT
    })
}

fn wrap_report(report: RankingReport, out: *mut *mut BtshiftReport) -> i32 {
    let names: Vec<CString> = report
        .players
        .iter()
        .map(|p| CString::new(p.name.replace('\0', " ")).unwrap_or_default())
        .collect();
    let handle = Box::new(BtshiftReport { report, names });
    unsafe { *out = Box::into_raw(handle) };
    BTSHIFT_OK
}

fn guarded(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic".into());
            BTSHIFT_ERR_PANIC
        }
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn btshift_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Most recent error message on this thread, or null; free the returned
/// string with `btshift_string_free`.
#[no_mangle]
pub extern "C" fn btshift_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Run an estimation config (JSON text; battle-log paths inside are resolved
/// against the current directory) and hand back a report handle through
/// `out`.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string and `out` a valid
/// pointer; the returned handle must be released with `btshift_report_free`.
#[no_mangle]
pub unsafe extern "C" fn btshift_estimate_run(
    config_json: *const c_char,
    out: *mut *mut BtshiftReport,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer".into());
            return BTSHIFT_ERR_ARGUMENT;
        }
        let raw = match unsafe { read_utf8(config_json) } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config: EstimateConfig = match serde_json::from_str(raw) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("invalid config: {e}"));
                return BTSHIFT_ERR_CONFIG;
            }
        };
        match cmd_estimate(&config) {
            Ok(report) => wrap_report(report, out),
            Err(e) => {
                let code = status_of(e.kind());
                set_error(e.to_string());
                code
            }
        }
    })
}

/// Fit the marginal baseline on a battle log; same config schema as
/// `btshift_estimate_run`.
///
/// # Safety
/// As for `btshift_estimate_run`.
#[no_mangle]
pub unsafe extern "C" fn btshift_marginal_bt_run(
    config_json: *const c_char,
    out: *mut *mut BtshiftReport,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer".into());
            return BTSHIFT_ERR_ARGUMENT;
        }
        let raw = match unsafe { read_utf8(config_json) } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config: EstimateConfig = match serde_json::from_str(raw) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("invalid config: {e}"));
                return BTSHIFT_ERR_CONFIG;
            }
        };
        match cmd_marginal_bt(&config) {
            Ok(report) => wrap_report(report, out),
            Err(e) => {
                let code = status_of(e.kind());
                set_error(e.to_string());
                code
            }
        }
    })
}

/// Run a simulation config; the metrics rows come back as a JSON string to
/// be released with `btshift_string_free`.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string and `out_json` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn btshift_simulate_run(
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        if out_json.is_null() {
            set_error("null output pointer".into());
            return BTSHIFT_ERR_ARGUMENT;
        }
        let raw = match unsafe { read_utf8(config_json) } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config: SimulateConfig = match serde_json::from_str(raw) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("invalid config: {e}"));
                return BTSHIFT_ERR_CONFIG;
            }
        };
        match cmd_simulate(&config) {
            Ok(output) => match serde_json::to_string_pretty(&output.rows) {
                Ok(json) => {
                    let c = CString::new(json).unwrap_or_default();
                    unsafe { *out_json = c.into_raw() };
                    BTSHIFT_OK
                }
                Err(e) => {
                    set_error(format!("serialization failed: {e}"));
                    BTSHIFT_ERR_DATA
                }
            },
            Err(e) => {
                let code = status_of(e.kind());
                set_error(e.to_string());
                code
            }
        }
    })
}

/// Number of players in the report (the reference player included, first).
///
/// # Safety
/// `report` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_num_players(report: *const BtshiftReport) -> usize {
    if report.is_null() {
        return 0;
    }
    unsafe { &*report }.report.players.len()
}

/// Player name at `index`; borrowed from the handle, do not free.
///
/// # Safety
/// `report` must be a live handle; the pointer is valid until the handle is
/// freed.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_player_name(
    report: *const BtshiftReport,
    index: usize,
) -> *const c_char {
    if report.is_null() {
        return ptr::null();
    }
    let r = unsafe { &*report };
    match r.names.get(index) {
        Some(name) => name.as_ptr(),
        None => ptr::null(),
    }
}

/// Point estimate of the player at `index` (zero for the reference player).
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_estimate(
    report: *const BtshiftReport,
    index: usize,
) -> f64 {
    let r = unsafe { &*report };
    r.report.players.get(index).map_or(f64::NAN, |p| p.estimate)
}

/// Standard error of the player at `index`.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_std(report: *const BtshiftReport, index: usize) -> f64 {
    let r = unsafe { &*report };
    r.report.players.get(index).map_or(f64::NAN, |p| p.std)
}

/// Interval bounds of the player at `index`.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_ci_lower(
    report: *const BtshiftReport,
    index: usize,
) -> f64 {
    let r = unsafe { &*report };
    r.report.players.get(index).map_or(f64::NAN, |p| p.ci.0)
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_ci_upper(
    report: *const BtshiftReport,
    index: usize,
) -> f64 {
    let r = unsafe { &*report };
    r.report.players.get(index).map_or(f64::NAN, |p| p.ci.1)
}

/// Full report as JSON; release with `btshift_string_free`.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_json(report: *const BtshiftReport) -> *mut c_char {
    if report.is_null() {
        return ptr::null_mut();
    }
    let r = unsafe { &*report };
    match serde_json::to_string_pretty(&r.report) {
        Ok(json) => CString::new(json).unwrap_or_default().into_raw(),
        Err(_) => ptr::null_mut(),
    }
}

/// Release a report handle.
///
/// # Safety
/// `report` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn btshift_report_free(report: *mut BtshiftReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn btshift_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
