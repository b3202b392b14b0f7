use std::ffi::{CStr, CString};
use std::ptr;

use inventropy_ffi::*;

const SCALAR: &str = "dim = 1\ninputs = 1\nfield.0.1 = x1\nfield.1.1 = 1\nu.lo = -1\nu.hi = 1\n";

fn system(text: &str) -> *mut InvSystem {
    let c = CString::new(text).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { inv_system_from_config(c.as_ptr(), &mut sys) }, InvStatus::Ok);
    sys
}

#[test]
fn scalar_round_trip() {
    unsafe {
        let sys = system(SCALAR);
        assert_eq!(inv_system_dim(sys), 1);
        assert_eq!(inv_system_inputs(sys), 1);
        let mut u = ptr::null_mut();
        assert_eq!(inv_control_new(sys, 0.1, [0.0].as_ptr(), 1, 1, &mut u), InvStatus::Ok);
        let mut x = [0.0];
        assert_eq!(inv_integrate(sys, u, [0.5].as_ptr(), 1.0, x.as_mut_ptr()), InvStatus::Ok);
        assert!((x[0] - 0.5 * 1f64.exp()).abs() < 1e-9);
        let mut a = 0.0;
        assert_eq!(inv_alpha(sys, u, [0.5].as_ptr(), 2.0, &mut a), InvStatus::Ok);
        assert!((a - 2.0).abs() < 1e-6);
        assert_eq!(inv_log_det(sys, u, [0.5].as_ptr(), 2.0, &mut a), InvStatus::Ok);
        assert!((a - 2.0).abs() < 1e-6);
        let mut v = 0.0;
        assert_eq!(inv_upper_bound(sys, [-0.99].as_ptr(), [0.99].as_ptr(), 0, &mut v), InvStatus::Ok);
        assert!((v - 1.0).abs() < 5e-3);
        assert_eq!(inv_lower_bound(sys, [-0.99].as_ptr(), [0.99].as_ptr(), 0, &mut v), InvStatus::Ok);
        assert!((v - 1.0).abs() < 5e-3);
        inv_control_free(u);
        inv_system_free(sys);
    }
}

#[test]
fn report_json_and_exterior_norm() {
    unsafe {
        let sys = system(SCALAR);
        let mut s = ptr::null_mut();
        assert_eq!(inv_entropy_report_json(sys, [-0.99].as_ptr(), [0.99].as_ptr(), 0, &mut s), InvStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(s).to_str().unwrap()).unwrap();
        assert!((v["upper"].as_f64().unwrap() - 1.0).abs() < 5e-3);
        inv_string_free(s);
        inv_system_free(sys);
        let (mut n, mut j) = (0.0, 0usize);
        let m = [2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.5];
        assert_eq!(inv_exterior_norm(m.as_ptr(), 3, &mut n, &mut j), InvStatus::Ok);
        assert!((n - 6.0).abs() < 1e-12);
        assert_eq!(j, 2);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let bad = CString::new("dim = 1\nfield.0.1 = x3\n").unwrap();
        let mut sys = ptr::null_mut();
        assert_eq!(inv_system_from_config(bad.as_ptr(), &mut sys), InvStatus::Config);
        assert!(sys.is_null());
        let msg = CStr::from_ptr(inv_last_error()).to_str().unwrap();
        assert!(!msg.is_empty());
        assert_eq!(inv_system_from_config(ptr::null(), &mut sys), InvStatus::NullPointer);

        let sys = system(SCALAR);
        let mut u = ptr::null_mut();
        assert_eq!(inv_control_new(sys, 0.1, [3.0].as_ptr(), 1, 1, &mut u), InvStatus::InvalidArgument);
        let blow = system("dim = 1\nfield.0.1 = x1^2\n");
        let mut ua = ptr::null_mut();
        assert_eq!(inv_control_new(blow, 0.1, ptr::null(), 0, 1, &mut ua), InvStatus::Ok);
        let mut x = [0.0];
        assert_eq!(inv_integrate(blow, ua, [1.0].as_ptr(), 2.0, x.as_mut_ptr()), InvStatus::Numerical);
        assert!(!inv_last_error().is_null());
        let mut v = 0.0;
        assert_eq!(inv_alpha(blow, ua, [0.1].as_ptr(), 0.5, &mut v), InvStatus::Ok);
        assert!(inv_last_error().is_null());
        inv_control_free(ua);
        inv_system_free(blow);
        inv_system_free(sys);
        inv_system_free(ptr::null_mut());
        assert!(!CStr::from_ptr(inv_version()).to_str().unwrap().is_empty());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/inventropy.h")).unwrap();
    for name in ["inv_system_from_config", "inv_control_new", "inv_upper_bound", "inv_last_error", "INV_STATUS_NUMERICAL"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
