//! C ABI over the stabperturb library.
//!
//! Every object crosses the boundary as an opaque pointer owned by the
//! caller and released with its matching `*_free`. Functions return an
//! `i32` status (`SP_OK` or a negative `SP_ERR_*` code); the message for the
//! most recent failure on the calling thread is available from
//! [`sp_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stabperturb::bundle::ReportBundle;
use stabperturb::cli::{run, SubcommandKind};
use stabperturb::scenario::{load_scenario, Scenario};
use stabperturb::LabError;

pub const SP_OK: i32 = 0;
pub const SP_ERR_NULL: i32 = -1;
pub const SP_ERR_UTF8: i32 = -2;
pub const SP_ERR_PANIC: i32 = -3;
pub const SP_ERR_PARSE: i32 = -10;
pub const SP_ERR_VALIDATION: i32 = -11;
pub const SP_ERR_IO: i32 = -12;
pub const SP_ERR_BRACKET: i32 = -13;
pub const SP_ERR_NOT_FOUND: i32 = -14;
pub const SP_ERR_INVALID_ARGUMENT: i32 = -15;
/// Any other library error; the message names its kind.
pub const SP_ERR_NUMERIC: i32 = -20;

/// A validated scenario.
pub struct SpScenario {
    inner: Scenario,
}

/// The result of one run: outcome, reports and constants.
pub struct SpBundle {
    inner: ReportBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_for(err: &LabError) -> i32 {
    match err {
        LabError::Parse { .. } => SP_ERR_PARSE,
        LabError::Validation(_) => SP_ERR_VALIDATION,
        LabError::Io(_) => SP_ERR_IO,
        LabError::BracketInvalid(_) => SP_ERR_BRACKET,
        _ => SP_ERR_NUMERIC,
    }
}

struct Fail(i32, String);

impl From<LabError> for Fail {
    fn from(e: LabError) -> Self {
        Fail(code_for(&e), format!("{}: {e}", e.kind()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SP_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            SP_ERR_PANIC
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SP_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SP_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(SP_ERR_NULL, format!("{what} is null")))
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(Fail(SP_ERR_NULL, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn kind_from_name(name: &str) -> Option<SubcommandKind> {
    Some(match name {
        "certify" => SubcommandKind::Certify,
        "perturb" => SubcommandKind::Perturb,
        "stability" => SubcommandKind::Stability,
        "threshold" => SubcommandKind::Threshold,
        "integral" => SubcommandKind::Integral,
        "scan" => SubcommandKind::Scan,
        _ => return None,
    })
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a scenario from a file path or `builtin:NAME`.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_load(source: *const c_char, out: *mut *mut SpScenario) -> i32 {
    guard(|| {
        check_out(out)?;
        let s = load_scenario(text(source, "source")?)?;
        *out = Box::into_raw(Box::new(SpScenario { inner: s }));
        Ok(())
    })
}

/// Parses and validates a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_from_json(json: *const c_char, out: *mut *mut SpScenario) -> i32 {
    guard(|| {
        check_out(out)?;
        let s = Scenario::from_json(text(json, "json")?)?;
        *out = Box::into_raw(Box::new(SpScenario { inner: s }));
        Ok(())
    })
}

/// Sets the scale factors on the scenario's perturbation columns.
///
/// # Safety
/// `scenario` must come from `sp_scenario_load`/`sp_scenario_from_json`.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_set_scales(scenario: *mut SpScenario, scale_b: f64, scale_c: f64) -> i32 {
    guard(|| {
        let s = scenario
            .as_mut()
            .ok_or_else(|| Fail(SP_ERR_NULL, "scenario is null".into()))?;
        let p = s
            .inner
            .perturbation
            .as_mut()
            .ok_or_else(|| Fail(SP_ERR_INVALID_ARGUMENT, "scenario has no perturbation".into()))?;
        let (old_b, old_c) = (p.scale_b, p.scale_c);
        p.scale_b = scale_b;
        p.scale_c = scale_c;
        if let Err(e) = s.inner.validate() {
            let p = s.inner.perturbation.as_mut().expect("checked above");
            p.scale_b = old_b;
            p.scale_c = old_c;
            return Err(e.into());
        }
        Ok(())
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sp_scenario_free(scenario: *mut SpScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a subcommand (`certify`, `perturb`, `stability`, `threshold`,
/// `integral` or `scan`). For `threshold`, `lo > hi` or NaN bounds fall
/// back to the scenario's bracket.
///
/// # Safety
/// Pointers must be valid as documented on the other entry points.
#[no_mangle]
pub unsafe extern "C" fn sp_run(
    scenario: *const SpScenario,
    subcommand: *const c_char,
    lo: f64,
    hi: f64,
    out: *mut *mut SpBundle,
) -> i32 {
    guard(|| {
        check_out(out)?;
        let s = obj(scenario, "scenario")?;
        let name = text(subcommand, "subcommand")?;
        let kind = kind_from_name(name)
            .ok_or_else(|| Fail(SP_ERR_INVALID_ARGUMENT, format!("unknown subcommand {name:?}")))?;
        let bracket = (kind == SubcommandKind::Threshold && lo.is_finite() && hi.is_finite() && lo <= hi)
            .then_some([lo, hi]);
        let b = run(kind, &s.inner, bracket)?;
        *out = Box::into_raw(Box::new(SpBundle { inner: b }));
        Ok(())
    })
}

/// Process exit code for the bundle's outcome: 0 preserved/certified,
/// 2 refuted/violated, 3 inconclusive. Returns `SP_ERR_NULL` for null.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_bundle_exit_code(bundle: *const SpBundle) -> i32 {
    match bundle.as_ref() {
        Some(b) => b.inner.outcome.exit_code(),
        None => SP_ERR_NULL,
    }
}

/// Looks up a named constant from the bundle's ledger.
///
/// # Safety
/// `bundle` must be a live handle, `name` NUL-terminated, `value` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_bundle_constant(bundle: *const SpBundle, name: *const c_char, value: *mut f64) -> i32 {
    guard(|| {
        let b = obj(bundle, "bundle")?;
        let key = text(name, "name")?;
        if value.is_null() {
            return Err(Fail(SP_ERR_NULL, "value pointer is null".into()));
        }
        let v = b
            .inner
            .constants
            .get(key)
            .ok_or_else(|| Fail(SP_ERR_NOT_FOUND, format!("no constant named {key:?}")))?;
        *value = *v;
        Ok(())
    })
}

/// Serializes the bundle as JSON. Release the string with `sp_string_free`.
///
/// # Safety
/// `bundle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_bundle_to_json(bundle: *const SpBundle, out: *mut *mut c_char) -> i32 {
    guard(|| {
        check_out(out)?;
        let b = obj(bundle, "bundle")?;
        let c = CString::new(b.inner.to_json()).map_err(|_| Fail(SP_ERR_UTF8, "interior NUL in JSON".into()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Writes the bundle JSON and CSV tables into `dir`.
///
/// # Safety
/// `bundle` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_bundle_emit(bundle: *const SpBundle, dir: *const c_char) -> i32 {
    guard(|| {
        let b = obj(bundle, "bundle")?;
        b.inner.emit(Path::new(text(dir, "dir")?))?;
        Ok(())
    })
}

/// Releases a bundle. Null is ignored.
///
/// # Safety
/// `bundle` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sp_bundle_free(bundle: *mut SpBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from `sp_bundle_to_json`.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
