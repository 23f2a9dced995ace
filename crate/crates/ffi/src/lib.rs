//! C ABI over `qrheston`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load` and released
//! by the matching `*_free`. Every fallible call returns a [`QrhStatus`]; the message of
//! the last failure on the calling thread is available from [`qrh_last_error`].
//! Panics never unwind into C: they are reported as [`QrhStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use qrheston::calibration::{calibrate_mtp_values, CalibrationConfig};
use qrheston::hedging::{hedge_ratio_dml, hedge_ratio_mtp, RatioEval};
use qrheston::kernel::{build_kernel, fit_kernel, KernelApprox};
use qrheston::mc::SimConfig;
use qrheston::model::{FactorState, ModelParams};
use qrheston::nn::{load_network, MlpNetwork};
use qrheston::pricing::{bs_price, implied_vol, price_spx_surface, AssetClass, SurfaceGrid, SURFACE_POINTS};
use qrheston::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrhStatus {
    Ok = 0,
    Domain = 1,
    Convergence = 2,
    Dimension = 3,
    NoSolution = 4,
    Numerical = 5,
    GridMismatch = 6,
    Gap = 7,
    Format = 8,
    Config = 9,
    Io = 10,
    NullPointer = 11,
    InvalidUtf8 = 12,
    Panic = 13,
}

impl From<&Error> for QrhStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => QrhStatus::Domain,
            Error::Convergence(_) => QrhStatus::Convergence,
            Error::Dimension { .. } => QrhStatus::Dimension,
            Error::NoSolution(_) => QrhStatus::NoSolution,
            Error::Numerical(_) => QrhStatus::Numerical,
            Error::GridMismatch(_) => QrhStatus::GridMismatch,
            Error::Gap(_) => QrhStatus::Gap,
            Error::Format(_) | Error::Json(_) => QrhStatus::Format,
            Error::Config(_) => QrhStatus::Config,
            Error::Io(_) => QrhStatus::Io,
        }
    }
}

/// `ω = (λ, η, a, b, c)`; roughness and variance cap take their defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrhParams {
    pub lambda: f64,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QrhParams {
    fn model(&self) -> ModelParams {
        ModelParams::new(self.lambda, self.eta, self.a, self.b, self.c)
    }
}

/// Hedge ratio and its parts.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrhRatio {
    pub ratio: f64,
    pub price: f64,
    pub dp_ds: f64,
    /// Nonzero when the point was moved onto the network's grid.
    pub clamped: i32,
}

/// Opaque kernel approximation.
pub struct QrhKernel(KernelApprox);

/// Opaque trained network.
pub struct QrhNetwork(MlpNetwork);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QrhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QrhStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            let s = QrhStatus::from(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            QrhStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("path is not valid UTF-8".into());
            QrhStatus::InvalidUtf8
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("panic: {}", msg.unwrap_or_default()));
            QrhStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qrh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty when none. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qrh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Kernel approximation with a given geometric mesh.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free with [`qrh_kernel_free`].
#[no_mangle]
pub unsafe extern "C" fn qrh_kernel_new(alpha: f64, n: usize, mesh: f64, out: *mut *mut QrhKernel) -> QrhStatus {
    guard(|| {
        let k = build_kernel(alpha, n, mesh)?;
        write(out, Box::into_raw(Box::new(QrhKernel(k))), "out")
    })
}

/// Kernel approximation at the mesh minimising the L² error on `[0, horizon]`.
///
/// # Safety
/// As [`qrh_kernel_new`].
#[no_mangle]
pub unsafe extern "C" fn qrh_kernel_fit(alpha: f64, n: usize, horizon: f64, out: *mut *mut QrhKernel) -> QrhStatus {
    guard(|| {
        let k = fit_kernel(alpha, n, horizon)?;
        write(out, Box::into_raw(Box::new(QrhKernel(k))), "out")
    })
}

/// # Safety
/// `k` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn qrh_kernel_free(k: *mut QrhKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Number of factors, mesh, weights and mean-reversion speeds. `weights` and `speeds`
/// must hold `n` values each; `n` is written first and may be queried with null arrays.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn qrh_kernel_describe(k: *const QrhKernel, n: *mut usize, mesh: *mut f64, weights: *mut f64, speeds: *mut f64) -> QrhStatus {
    guard(|| {
        let k = &as_ref(k, "kernel")?.0;
        write(n, k.n, "n")?;
        if !mesh.is_null() {
            mesh.write(k.x_n);
        }
        if !weights.is_null() {
            output(weights, k.n, "weights")?.copy_from_slice(&k.c);
        }
        if !speeds.is_null() {
            output(speeds, k.n, "speeds")?.copy_from_slice(&k.gamma);
        }
        Ok(())
    })
}

/// Undiscounted Black-Scholes call price.
#[no_mangle]
pub extern "C" fn qrh_bs_price(spot: f64, strike: f64, tau: f64, sigma: f64) -> f64 {
    bs_price(spot, strike, tau, sigma)
}

/// Black-Scholes implied vol of a call price.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qrh_implied_vol(price: f64, spot: f64, strike: f64, tau: f64, out: *mut f64) -> QrhStatus {
    guard(|| write(out, implied_vol(price, spot, strike, tau)?, "out"))
}

/// Monte Carlo SPX implied vols on the standard 15 × 4 grid (strike-major). Masked
/// points are NaN. `vols` and `ci_half` hold 60 values; `ci_half` may be null.
///
/// # Safety
/// `params` and `z0` (`n_z` values) must be valid; output arrays must hold 60 values.
#[no_mangle]
pub unsafe extern "C" fn qrh_price_spx_surface(
    k: *const QrhKernel,
    params: *const QrhParams,
    z0: *const f64,
    n_z: usize,
    paths: usize,
    dt: f64,
    seed: u64,
    vols: *mut f64,
    ci_half: *mut f64,
) -> QrhStatus {
    guard(|| {
        let k = &as_ref(k, "kernel")?.0;
        let p = as_ref(params, "params")?.model();
        let z0 = input(z0, n_z, "z0")?;
        let grid = SurfaceGrid::default_for(AssetClass::Spx);
        let horizon = grid.maturities.iter().copied().fold(0.0, f64::max);
        let cfg = SimConfig::with_step(horizon, dt, paths, seed);
        let s = price_spx_surface(&p, k, z0, &cfg, &grid)?;
        output(vols, SURFACE_POINTS, "vols")?.copy_from_slice(&s.vols);
        if !ci_half.is_null() {
            let ci = s.ci_half.unwrap_or_else(|| vec![f64::NAN; SURFACE_POINTS]);
            output(ci_half, SURFACE_POINTS, "ci_half")?.copy_from_slice(&ci);
        }
        Ok(())
    })
}

/// Loads a network file written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn qrh_network_load(path: *const c_char, out: *mut *mut QrhNetwork) -> QrhStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| Fail::Utf8)?;
        let (net, _) = load_network(Path::new(p))?;
        write(out, Box::into_raw(Box::new(QrhNetwork(net))), "out")
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn qrh_network_free(net: *mut QrhNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input and output widths.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qrh_network_shape(net: *const QrhNetwork, inputs: *mut usize, outputs: *mut usize) -> QrhStatus {
    guard(|| {
        let n = &as_ref(net, "network")?.0;
        write(inputs, n.inputs(), "inputs")?;
        write(outputs, n.outputs(), "outputs")
    })
}

/// Raw-space prediction.
///
/// # Safety
/// `x` must hold `n_x` values and `y` `n_y` values.
#[no_mangle]
pub unsafe extern "C" fn qrh_network_predict(net: *const QrhNetwork, x: *const f64, n_x: usize, y: *mut f64, n_y: usize) -> QrhStatus {
    guard(|| {
        let n = &as_ref(net, "network")?.0;
        let out = n.predict(input(x, n_x, "x")?)?;
        let y = output(y, n_y, "y")?;
        if y.len() != out.len() {
            return Err(Error::Dimension { expected: out.len(), got: y.len() }.into());
        }
        y.copy_from_slice(&out);
        Ok(())
    })
}

unsafe fn ratio_call(
    f: fn(&MlpNetwork, &ModelParams, &FactorState, f64, f64) -> qrheston::Result<RatioEval>,
    net: *const QrhNetwork,
    params: *const QrhParams,
    spot: f64,
    z: *const f64,
    n_z: usize,
    strike: f64,
    tau: f64,
    out: *mut QrhRatio,
) -> QrhStatus {
    guard(|| {
        let n = &as_ref(net, "network")?.0;
        let p = as_ref(params, "params")?.model();
        let state = FactorState::new(spot, input(z, n_z, "z")?.to_vec());
        let r = f(n, &p, &state, strike, tau)?;
        write(out, QrhRatio { ratio: r.ratio, price: r.price, dp_ds: r.dp_ds, clamped: r.clamped as i32 }, "out")
    })
}

/// Hedge ratio from the forward SPX network.
///
/// # Safety
/// `z` must hold `n_z` values; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn qrh_hedge_ratio_mtp(
    net: *const QrhNetwork,
    params: *const QrhParams,
    spot: f64,
    z: *const f64,
    n_z: usize,
    strike: f64,
    tau: f64,
    out: *mut QrhRatio,
) -> QrhStatus {
    ratio_call(hedge_ratio_mtp, net, params, spot, z, n_z, strike, tau, out)
}

/// Hedge ratio from the differential network trained for `strike`.
///
/// # Safety
/// As [`qrh_hedge_ratio_mtp`].
#[no_mangle]
pub unsafe extern "C" fn qrh_hedge_ratio_dml(
    net: *const QrhNetwork,
    params: *const QrhParams,
    spot: f64,
    z: *const f64,
    n_z: usize,
    strike: f64,
    tau: f64,
    out: *mut QrhRatio,
) -> QrhStatus {
    ratio_call(hedge_ratio_dml, net, params, spot, z, n_z, strike, tau, out)
}

/// Fits `(ω, z_0)` to target vols (60 each, strike-major, NaN = missing) with the
/// forward networks. `params` receives 15 values; `objective` may be null.
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn qrh_calibrate_mtp(
    net_spx: *const QrhNetwork,
    net_vix: *const QrhNetwork,
    target_spx: *const f64,
    target_vix: *const f64,
    restarts: usize,
    params: *mut f64,
    objective: *mut f64,
) -> QrhStatus {
    guard(|| {
        let s = &as_ref(net_spx, "net_spx")?.0;
        let v = &as_ref(net_vix, "net_vix")?.0;
        let cfg = CalibrationConfig { restarts, ..Default::default() };
        let r = calibrate_mtp_values(s, v, input(target_spx, SURFACE_POINTS, "target_spx")?, input(target_vix, SURFACE_POINTS, "target_vix")?, &cfg, None)?;
        output(params, 15, "params")?.copy_from_slice(&r.params());
        if !objective.is_null() {
            objective.write(r.objective.unwrap_or(f64::NAN));
        }
        Ok(())
    })
}
