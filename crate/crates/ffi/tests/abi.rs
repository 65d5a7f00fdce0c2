use std::ffi::{CStr, CString};
use std::ptr;

use hflow_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe { hflow_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn lattice(dim: usize, n: usize) -> *mut HflowLattice {
    let mut lat = ptr::null_mut();
    assert_eq!(unsafe { hflow_lattice_new(dim, n, 1.0, &mut lat) }, HflowStatus::Ok);
    lat
}

#[test]
fn invalid_lattice_reports_code_and_message() {
    let mut lat = ptr::null_mut();
    let status = unsafe { hflow_lattice_new(3, 4, 1.0, &mut lat) };
    assert_eq!(status, HflowStatus::InvalidLattice);
    assert!(lat.is_null());
    assert!(last_error().contains("8 points"), "{}", last_error());
}

#[test]
fn null_handles_are_rejected() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_identity(ptr::null(), &mut g) }, HflowStatus::NullPointer);
    assert_eq!(unsafe { hflow_lattice_new(2, 8, 1.0, ptr::null_mut()) }, HflowStatus::NullPointer);
    assert_eq!(unsafe { hflow_lattice_node_count(ptr::null()) }, 0);
    assert!(unsafe { hflow_flow_time(ptr::null()) }.is_nan());
    unsafe {
        hflow_metric_free(ptr::null_mut());
        hflow_flow_free(ptr::null_mut());
        hflow_lattice_free(ptr::null_mut());
    }
}

#[test]
fn components_round_trip() {
    let lat = lattice(2, 8);
    assert_eq!(unsafe { hflow_lattice_node_count(lat) }, 64);
    let mut data = Vec::new();
    for k in 0..64 {
        data.extend_from_slice(&[1.0 + 0.01 * k as f64, 0.1, 2.0]);
    }
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_from_components(lat, data.as_ptr(), data.len(), &mut g) }, HflowStatus::Ok);
    let count = unsafe { hflow_metric_component_count(g) };
    assert_eq!(count, data.len());
    let mut back = vec![0.0; count];
    assert_eq!(unsafe { hflow_metric_components(g, back.as_mut_ptr(), 2) }, HflowStatus::InvalidArgument);
    assert_eq!(unsafe { hflow_metric_components(g, back.as_mut_ptr(), count) }, HflowStatus::Ok);
    assert_eq!(back, data);
    unsafe {
        hflow_metric_free(g);
        hflow_lattice_free(lat);
    }
}

#[test]
fn non_spd_components_are_refused() {
    let lat = lattice(2, 8);
    let data = [1.0, 2.0, 1.0].repeat(64);
    let mut g = ptr::null_mut();
    let status = unsafe { hflow_metric_from_components(lat, data.as_ptr(), data.len(), &mut g) };
    assert_eq!(status, HflowStatus::SingularMetric);
    assert!(g.is_null());
    unsafe { hflow_lattice_free(lat) };
}

#[test]
fn rough_data_flows_and_stays_within_bounds() {
    let lat = lattice(2, 16);
    let mut g = ptr::null_mut();
    let status = unsafe { hflow_metric_rough(lat, HflowRoughKind::LoglogSpike, 1.5, 0, &mut g) };
    assert_eq!(status, HflowStatus::Ok);
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { hflow_metric_bilipschitz(g, &mut lo, &mut hi) }, HflowStatus::Ok);
    assert!(lo >= 1.0 / 1.5 - 1e-12 && hi <= 1.5 + 1e-12);

    let mut smooth = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_mollify(g, 0.125, true, &mut smooth) }, HflowStatus::Ok);
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { hflow_flow_new(smooth, 0.8, &mut f) }, HflowStatus::Ok);
    assert_eq!(unsafe { hflow_flow_evolve(f, 1e-3) }, HflowStatus::Ok);
    assert_eq!(unsafe { hflow_flow_time(f) }, 1e-3);
    assert!(unsafe { hflow_flow_steps(f) } > 0);
    assert_eq!(unsafe { hflow_flow_evolve(f, 1e-4) }, HflowStatus::InvalidArgument);

    let mut later = ptr::null_mut();
    assert_eq!(unsafe { hflow_flow_metric(f, &mut later) }, HflowStatus::Ok);
    let (mut lo2, mut hi2) = (0.0, 0.0);
    assert_eq!(unsafe { hflow_metric_bilipschitz(later, &mut lo2, &mut hi2) }, HflowStatus::Ok);
    assert!(hi2 - lo2 < hi - lo);
    unsafe {
        hflow_metric_free(later);
        hflow_flow_free(f);
        hflow_metric_free(smooth);
        hflow_metric_free(g);
        hflow_lattice_free(lat);
    }
}

#[test]
fn flat_metric_has_zero_scalar_curvature() {
    let lat = lattice(3, 8);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_identity(lat, &mut g) }, HflowStatus::Ok);
    let (mut lo, mut hi) = (1.0, 1.0);
    assert_eq!(unsafe { hflow_metric_scalar_range(g, &mut lo, &mut hi) }, HflowStatus::Ok);
    assert_eq!((lo, hi), (0.0, 0.0));
    unsafe {
        hflow_metric_free(g);
        hflow_lattice_free(lat);
    }
}

#[test]
fn snapshots_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("g.snap").to_str().unwrap()).unwrap();
    let lat = lattice(2, 8);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_rough(lat, HflowRoughKind::FourierMultiscale, 2.0, 3, &mut g) }, HflowStatus::Ok);
    assert_eq!(unsafe { hflow_metric_save(g, path.as_ptr()) }, HflowStatus::Ok);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_load(path.as_ptr(), &mut h) }, HflowStatus::Ok);
    let n = unsafe { hflow_metric_component_count(g) };
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    unsafe {
        hflow_metric_components(g, a.as_mut_ptr(), n);
        hflow_metric_components(h, b.as_mut_ptr(), n);
    }
    assert_eq!(a, b);
    let missing = CString::new(dir.path().join("none.snap").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hflow_metric_load(missing.as_ptr(), &mut m) }, HflowStatus::Io);
    unsafe {
        hflow_metric_free(h);
        hflow_metric_free(g);
        hflow_lattice_free(lat);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hflow.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from the header");
    }
    assert!(header.contains("HFLOW_STATUS_BLOW_UP = 5"));
    let version = unsafe { CStr::from_ptr(hflow_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}
