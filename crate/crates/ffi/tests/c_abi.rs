//! Calls through the exported C ABI.

use std::ffi::{CStr, CString};
use std::ptr;

use pulsefront_ffi::*;

const CONSTANT: &str = "periods = { T = 1.0, L = 1.0 }\ngrid = { nt = 16, nx = 16 }\ndiffusion = { kind = \"constant\", value = 1.0 }\ndrift = { kind = \"constant\", value = 0.0 }\n";

fn medium(text: &str) -> *mut PfMedium {
    let c = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pf_medium_from_toml(c.as_ptr(), &mut m) }, PfStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = pf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn closed_form_values() {
    let m = medium(CONSTANT);
    unsafe {
        let mut k = 0.0;
        assert_eq!(pf_eigen(m, 0.5, PfZeroOrder::Mu, &mut k), PfStatus::Ok);
        assert!((k + 1.25).abs() < 1e-6);
        let (mut c, mut l) = (0.0, 0.0);
        assert_eq!(pf_minimal_speed(m, PfZeroOrder::Mu, 0.0, &mut c, &mut l), PfStatus::Ok);
        assert!((c - 2.0).abs() < 1e-3);
        let (mut lam, mut big) = (0.0, 0.0);
        assert_eq!(pf_decay_roots(m, PfZeroOrder::Mu, 0.0, 2.5, &mut lam, &mut big), PfStatus::Ok);
        assert!((lam - 0.5).abs() < 1e-6 && (big - 2.0).abs() < 1e-6);
        let (mut nt, mut nx) = (0, 0);
        assert_eq!(pf_medium_grid(m, &mut nt, &mut nx), PfStatus::Ok);
        let mut p = vec![0.0; nt * nx];
        let mut res = 0.0;
        assert_eq!(pf_equilibrium(m, p.as_mut_ptr(), p.len(), &mut res), PfStatus::Ok);
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert_eq!(pf_equilibrium(m, p.as_mut_ptr(), 3, ptr::null_mut()), PfStatus::BufferTooSmall);
        pf_medium_free(m);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad = CString::new("grid = 3").unwrap();
        assert_eq!(pf_medium_from_toml(bad.as_ptr(), &mut m), PfStatus::Config);
        assert!(m.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(pf_medium_from_toml(ptr::null(), &mut m), PfStatus::NullPointer);

        let m = medium(CONSTANT);
        let (mut lam, mut big) = (0.0, 0.0);
        assert_eq!(pf_decay_roots(m, PfZeroOrder::Mu, 0.0, 1.0, &mut lam, &mut big), PfStatus::Domain);
        assert!(last_error().contains("subcritical speed"));
        let mut k = 0.0;
        assert_eq!(pf_eigen(ptr::null(), 0.5, PfZeroOrder::Mu, &mut k), PfStatus::NullPointer);
        assert_eq!(pf_eigen(m, 0.5, PfZeroOrder::Mu, &mut k), PfStatus::Ok);
        assert!(pf_last_error_message().is_null());
        pf_medium_free(m);
        pf_medium_free(ptr::null_mut());
    }
}

#[test]
fn front_report() {
    let m = medium(&CONSTANT.replace("nt = 16, nx = 16", "nt = 8, nx = 8"));
    let mut r = PfFrontReport::default();
    assert_eq!(unsafe { pf_front(m, 2.5, 0.2, 8.0, PfFrontPath::Kpp, &mut r) }, PfStatus::Ok);
    assert!(r.iters > 0);
    assert!(r.monotone_defect <= 1e-8 && r.sandwich_defect <= 0.0);
    unsafe { pf_medium_free(m) };
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pulsefront.h")).unwrap();
    for name in [
        "pf_medium_from_toml",
        "pf_medium_free",
        "pf_medium_grid",
        "pf_eigen",
        "pf_minimal_speed",
        "pf_decay_roots",
        "pf_equilibrium",
        "pf_front",
        "pf_last_error_message",
        "pf_version",
        "typedef struct PfMedium PfMedium",
        "PF_STATUS_OK = 0",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
    let v = unsafe { CStr::from_ptr(pf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
