use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use stabperturb_ffi::*;

fn last_error() -> String {
    let p = sp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(source: &str) -> *mut SpScenario {
    let src = CString::new(source).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sp_scenario_load(src.as_ptr(), &mut s) }, SP_OK);
    s
}

#[test]
fn certify_round_trip_through_handles() {
    let s = load("builtin:S1");
    let cmd = CString::new("certify").unwrap();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { sp_run(s, cmd.as_ptr(), f64::NAN, f64::NAN, &mut b) }, SP_OK);
    assert_eq!(unsafe { sp_bundle_exit_code(b) }, 0);

    let name = CString::new("M").unwrap();
    let mut m = 0.0;
    assert_eq!(unsafe { sp_bundle_constant(b, name.as_ptr(), &mut m) }, SP_OK);
    assert!(m >= 1.0);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { sp_bundle_to_json(b, &mut json) }, SP_OK);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"command\": \"certify\""));
    unsafe {
        sp_string_free(json);
        sp_bundle_free(b);
        sp_scenario_free(s);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sp_scenario_load(ptr::null(), &mut s) }, SP_ERR_NULL);
    assert!(last_error().contains("null"));

    let bad = CString::new("{\"schema_version\": 1,").unwrap();
    assert_eq!(unsafe { sp_scenario_from_json(bad.as_ptr(), &mut s) }, SP_ERR_PARSE);
    assert!(last_error().starts_with("ParseError"));

    let missing = CString::new("builtin:NOPE").unwrap();
    let code = unsafe { sp_scenario_load(missing.as_ptr(), &mut s) };
    assert!(code < 0);
    assert!(s.is_null());

    let s = load("builtin:S1-P1");
    let cmd = CString::new("frobnicate").unwrap();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { sp_run(s, cmd.as_ptr(), 0.0, 1.0, &mut b) }, SP_ERR_INVALID_ARGUMENT);
    assert!(b.is_null());

    assert_eq!(unsafe { sp_scenario_set_scales(s, f64::NAN, 1.0) }, SP_ERR_VALIDATION);
    assert_eq!(unsafe { sp_scenario_set_scales(s, 0.5, 0.5) }, SP_OK);

    let plain = load("builtin:S1");
    assert_eq!(unsafe { sp_scenario_set_scales(plain, 1.0, 1.0) }, SP_ERR_INVALID_ARGUMENT);
    unsafe {
        sp_scenario_free(s);
        sp_scenario_free(plain);
        sp_scenario_free(ptr::null_mut());
        sp_bundle_free(ptr::null_mut());
    }
    assert_eq!(unsafe { sp_bundle_exit_code(ptr::null()) }, SP_ERR_NULL);
}

#[test]
fn emit_writes_bundle() {
    let s = load("builtin:S1");
    let cmd = CString::new("scan").unwrap();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { sp_run(s, cmd.as_ptr(), f64::NAN, f64::NAN, &mut b) }, SP_OK);
    let dir = std::env::temp_dir().join(format!("sp_ffi_emit_{}", std::process::id()));
    let cdir = CString::new(dir.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sp_bundle_emit(b, cdir.as_ptr()) }, SP_OK);
    assert!(dir.join("bundle.json").exists());
    assert!(dir.join("circle_scan.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
    unsafe {
        sp_bundle_free(b);
        sp_scenario_free(s);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(sp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_interface() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/stabperturb.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build.rs");
    for sym in [
        "SpScenario",
        "SpBundle",
        "sp_last_error",
        "sp_scenario_load",
        "sp_run",
        "sp_bundle_exit_code",
        "sp_string_free",
        "SP_ERR_PARSE",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    // The header must stand alone as C when a compiler is around.
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(&header)
        .status()
    {
        assert!(status.success(), "header does not compile as C99");
    }
}
