use std::ffi::{CStr, CString};
use std::ptr;

use gaugepf_ffi::*;

const PAIR: &str = r#"{"nodes": ["a", "b"], "edges": [{"id": "e0", "tail": "a", "head": "b"}],
    "factors": {"a": {"order": ["e0+"], "table": {"0": 1, "1": 2}},
                "b": {"order": ["e0-"], "table": {"0": 3, "1": 4}}}}"#;

const BOUQUET: &str = r#"{"nodes": ["a"], "edges": [{"id": "s", "tail": "a", "head": "a"}],
    "factors": {"a": {"order": ["s+", "s-"], "table": {"00": 2, "10": 5, "01": 5, "11": 3}}}}"#;

fn load(text: &str) -> *mut GpfModel {
    let c = CString::new(text).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { gpf_model_from_json(c.as_ptr(), &mut h) }, GpfStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let n = unsafe { gpf_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; n + 1];
    unsafe { gpf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn pair_round_trip() {
    let h = load(PAIR);
    let (mut edges, mut nodes, mut z) = (0usize, 0usize, 0.0f64);
    unsafe {
        assert_eq!(gpf_model_num_edges(h, &mut edges), GpfStatus::Ok);
        assert_eq!(gpf_model_num_nodes(h, &mut nodes), GpfStatus::Ok);
        assert_eq!(gpf_partition_exact(h, 0, &mut z), GpfStatus::Ok);
    }
    assert_eq!((edges, nodes, z), (1, 2, 11.0));

    let mut gauge = [0.0; 2];
    let mut zb = 0.0;
    let st = unsafe { gpf_bp_solve(h, ptr::null(), &mut zb, gauge.as_mut_ptr(), gauge.len()) };
    assert_eq!(st, GpfStatus::Ok);
    assert!((zb - 11.0).abs() < 1e-12);
    assert!((gauge[0] - 4.0 / 3.0).abs() < 1e-9 && (gauge[1] - 2.0).abs() < 1e-9);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { gpf_model_to_json(h, &mut s) }, GpfStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { gpf_string_free(s) };
    let h2 = load(&text);
    let mut z2 = 0.0;
    unsafe { gpf_partition_exact(h2, 0, &mut z2) };
    assert_eq!(z2, 11.0);
    unsafe {
        gpf_model_free(h);
        gpf_model_free(h2);
    }
}

#[test]
fn loop_series_on_bouquet() {
    let h = load(BOUQUET);
    let mut opts = gpf_solver_options_default();
    opts.seed = 7;
    let (mut sum, mut count) = (0.0, 0usize);
    assert_eq!(unsafe { gpf_loop_series(h, &opts, &mut sum, &mut count) }, GpfStatus::Ok);
    assert_eq!(count, 2);
    assert!((sum - 5.0).abs() < 1e-9);
    unsafe { gpf_model_free(h) };
}

#[test]
fn errors_have_codes_and_messages() {
    let bad = CString::new(PAIR.replace("\"1\": 4", "\"1x\": 4")).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { gpf_model_from_json(bad.as_ptr(), &mut h) }, GpfStatus::ParseError);
    assert!(h.is_null());
    assert!(last_error().contains("factors.b.table"), "{}", last_error());

    assert_eq!(unsafe { gpf_model_from_json(ptr::null(), &mut h) }, GpfStatus::NullPointer);
    let mut z = 0.0;
    assert_eq!(unsafe { gpf_partition_exact(ptr::null(), 0, &mut z) }, GpfStatus::NullPointer);

    let m = load(PAIR);
    let mut small = [0.0; 1];
    let st = unsafe { gpf_bp_solve(m, ptr::null(), &mut z, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, GpfStatus::BufferTooSmall);
    let mut opts = gpf_solver_options_default();
    opts.damping = 1.5;
    assert_eq!(unsafe { gpf_bp_solve(m, &opts, &mut z, ptr::null_mut(), 0) }, GpfStatus::InvalidArgument);
    assert!(last_error().contains("damping"));
    // success clears the message
    assert_eq!(unsafe { gpf_partition_exact(m, 0, &mut z) }, GpfStatus::Ok);
    assert_eq!(unsafe { gpf_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe { gpf_model_free(m) };
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/gaugepf.h");
    for sym in [
        "gpf_version",
        "gpf_solver_options_default",
        "gpf_last_error_message",
        "gpf_model_from_json",
        "gpf_model_free",
        "gpf_model_to_json",
        "gpf_string_free",
        "gpf_model_num_edges",
        "gpf_model_num_nodes",
        "gpf_partition_exact",
        "gpf_bp_solve",
        "gpf_loop_series",
        "typedef struct GpfModel GpfModel",
        "GPF_STATUS_NOT_CONVERGED = 6",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
    let v = unsafe { CStr::from_ptr(gpf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
