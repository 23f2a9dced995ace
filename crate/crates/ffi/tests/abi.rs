use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use qrheston::nn::{save_network, Arch, MlpNetwork, NetworkManifest, Scaling};
use qrheston_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qrh_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn kernel_handle_round_trip() {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { qrh_kernel_new(0.51, 10, 3.92, &mut k) }, QrhStatus::Ok);
    let (mut n, mut mesh) = (0usize, 0.0);
    let (mut c, mut g) = (vec![0.0; 10], vec![0.0; 10]);
    assert_eq!(unsafe { qrh_kernel_describe(k, &mut n, &mut mesh, c.as_mut_ptr(), g.as_mut_ptr()) }, QrhStatus::Ok);
    assert_eq!((n, mesh), (10, 3.92));
    let direct = qrheston::kernel::build_kernel(0.51, 10, 3.92).unwrap();
    assert_eq!(c, direct.c);
    assert_eq!(g, direct.gamma);
    unsafe { qrh_kernel_free(k) };
    unsafe { qrh_kernel_free(ptr::null_mut()) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { qrh_kernel_new(0.51, 10, 0.5, &mut k) }, QrhStatus::Domain);
    assert!(k.is_null());
    assert!(last_error().contains("mesh"));
    assert_eq!(unsafe { qrh_kernel_new(0.51, 10, 3.92, ptr::null_mut()) }, QrhStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { qrh_implied_vol(0.0, 100.0, 90.0, 0.05, &mut v) }, QrhStatus::NoSolution);
    let missing = CString::new("/nonexistent/net.qrhn").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { qrh_network_load(missing.as_ptr(), &mut net) }, QrhStatus::Io);
}

#[test]
fn implied_vol_inverts_price() {
    let p = qrh_bs_price(100.0, 98.0, 0.08, 0.23);
    let mut v = 0.0;
    assert_eq!(unsafe { qrh_implied_vol(p, 100.0, 98.0, 0.08, &mut v) }, QrhStatus::Ok);
    assert!((v - 0.23).abs() < 1e-10);
    assert!(!unsafe { CStr::from_ptr(qrh_version()) }.to_bytes().is_empty());
}

fn flat_net(dir: &Path) -> PathBuf {
    let mut net = MlpNetwork::new(Arch::MtpSpx, Scaling::identity(15, 60), 0).unwrap();
    net.params.iter_mut().for_each(|p| *p = 0.0);
    net.scaling.out_center = vec![0.2; 60];
    let path = dir.join("mtp-spx.qrhn");
    save_network(&path, &net, &NetworkManifest::describe(&net)).unwrap();
    path
}

#[test]
fn network_predict_and_hedge_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(flat_net(dir.path()).to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { qrh_network_load(path.as_ptr(), &mut net) }, QrhStatus::Ok);
    let (mut ni, mut no) = (0, 0);
    assert_eq!(unsafe { qrh_network_shape(net, &mut ni, &mut no) }, QrhStatus::Ok);
    assert_eq!((ni, no), (15, 60));
    let x = [0.1; 15];
    let mut y = [0.0; 60];
    assert_eq!(unsafe { qrh_network_predict(net, x.as_ptr(), 15, y.as_mut_ptr(), 60) }, QrhStatus::Ok);
    assert!(y.iter().all(|&v| v == 0.2));
    assert_eq!(unsafe { qrh_network_predict(net, x.as_ptr(), 14, y.as_mut_ptr(), 60) }, QrhStatus::Dimension);

    let params = QrhParams { lambda: 1.0, eta: 1.2, a: 0.35, b: 0.2, c: 0.0025 };
    let z = [0.0; 10];
    let mut r = QrhRatio { ratio: 0.0, price: 0.0, dp_ds: 0.0, clamped: 0 };
    assert_eq!(unsafe { qrh_hedge_ratio_mtp(net, &params, 100.0, z.as_ptr(), 10, 98.0, 0.05, &mut r) }, QrhStatus::Ok);
    let want = qrheston::pricing::bs_delta(100.0, 98.0, 0.05, 0.2);
    assert!((r.ratio - want).abs() < 1e-12);
    assert_eq!(r.clamped, 0);
    // the surface network is not a differential network
    assert_eq!(unsafe { qrh_hedge_ratio_dml(net, &params, 100.0, z.as_ptr(), 10, 98.0, 0.05, &mut r) }, QrhStatus::Domain);
    unsafe { qrh_network_free(net) };
}

#[test]
fn surface_pricing_matches_the_library() {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { qrh_kernel_new(0.51, 10, 3.92, &mut k) }, QrhStatus::Ok);
    let params = QrhParams { lambda: 1.0, eta: 1.2, a: 0.35, b: 0.2, c: 0.0025 };
    let z = [0.0; 10];
    let mut vols = [0.0; 60];
    assert_eq!(unsafe { qrh_price_spx_surface(k, &params, z.as_ptr(), 10, 500, 0.0012, 3, vols.as_mut_ptr(), ptr::null_mut()) }, QrhStatus::Ok);
    let kernel = qrheston::kernel::build_kernel(0.51, 10, 3.92).unwrap();
    let p = qrheston::model::ModelParams::new(1.0, 1.2, 0.35, 0.2, 0.0025);
    let cfg = qrheston::mc::SimConfig::with_step(0.09, 0.0012, 500, 3);
    let grid = qrheston::pricing::SurfaceGrid::default_for(qrheston::pricing::AssetClass::Spx);
    let s = qrheston::pricing::price_spx_surface(&p, &kernel, &z, &cfg, &grid).unwrap();
    assert!(vols.iter().zip(&s.vols).all(|(a, b)| a.to_bits() == b.to_bits()));
    unsafe { qrh_kernel_free(k) };
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/qrheston.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for f in ["qrh_kernel_new", "qrh_network_load", "qrh_hedge_ratio_mtp", "qrh_calibrate_mtp", "qrh_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"]).arg(&header).status() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(status.success());
}
