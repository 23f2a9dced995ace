//! Calibration of `(ω, z_0)` to an SPX and a VIX surface.
//!
//! The direct route reads the parameters off the inverse network. The optimisation
//! route minimises the weighted squared mismatch between target vols and the forward
//! networks' surfaces in normalised coordinates, where the parameter box is the unit cube.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{param_box, PARAM_DIM};
use crate::error::{check_len, Error, Result};
use crate::nn::{fill_masked, Arch, MlpNetwork};
use crate::optim::{halton, minimize_box, LbfgsConfig};
use crate::pricing::{AssetClass, IVSurface, SurfaceGrid, SURFACE_POINTS};

pub const PARAM_NAMES: [&str; PARAM_DIM] =
    ["lambda", "eta", "a", "b", "c", "z1", "z2", "z3", "z4", "z5", "z6", "z7", "z8", "z9", "z10"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PtM")]
    Ptm,
    #[serde(rename = "MtP")]
    Mtp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: Method,
    pub omega_hat: Vec<f64>,
    pub z0_hat: Vec<f64>,
    pub objective: Option<f64>,
    pub rmse_spx: Option<f64>,
    pub rmse_vix: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters sitting on a box edge.
    pub active_bounds: Vec<String>,
    /// Restart that produced the result.
    pub restart: Option<usize>,
    /// Objective at the accepted iterates of that restart.
    pub trace: Vec<f64>,
    pub restarts: Vec<RestartSummary>,
}

impl CalibrationResult {
    pub fn params(&self) -> Vec<f64> {
        self.omega_hat.iter().chain(&self.z0_hat).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub restarts: usize,
    pub lbfgs: LbfgsConfig,
    /// Per-point weights; `None` weighs every point 1.
    pub weights_spx: Option<Vec<f64>>,
    pub weights_vix: Option<Vec<f64>>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { restarts: 8, lbfgs: LbfgsConfig::default(), weights_spx: None, weights_vix: None }
    }
}

/// `|θ̂ - θ| / (θ_up - θ_low)` per coordinate.
pub fn evaluate_nae(truth: &[f64], estimate: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    check_len(truth.len(), estimate.len())?;
    check_len(truth.len(), lo.len())?;
    check_len(truth.len(), hi.len())?;
    Ok((0..truth.len()).map(|i| (estimate[i] - truth[i]).abs() / (hi[i] - lo[i])).collect())
}

/// Root mean squared difference over points defined in both surfaces.
pub fn surface_rmse(model: &[f64], target: &[f64]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (m, t) in model.iter().zip(target) {
        if m.is_finite() && t.is_finite() {
            s += (m - t).powi(2);
            n += 1;
        }
    }
    if n == 0 { f64::NAN } else { (s / n as f64).sqrt() }
}

fn surface_values(surface: &IVSurface, class: AssetClass) -> Result<Vec<f64>> {
    if surface.asset_class != class {
        return Err(Error::GridMismatch(format!("expected a {} surface, got {}", class.as_str(), surface.asset_class.as_str())));
    }
    surface.check_grid(&SurfaceGrid::default_for(class))?;
    Ok(surface.vols.clone())
}

fn check_arch(net: &MlpNetwork, arch: Arch) -> Result<()> {
    if net.arch != arch {
        return Err(Error::domain(format!("expected a {arch} network, got {}", net.arch)));
    }
    Ok(())
}

fn active_bounds(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<String> {
    (0..x.len())
        .filter(|&i| {
            let tol = 1e-9 * (hi[i] - lo[i]);
            x[i] <= lo[i] + tol || x[i] >= hi[i] - tol
        })
        .map(|i| PARAM_NAMES[i].to_string())
        .collect()
}

/// One forward pass of the inverse network; outputs are clipped to the parameter box.
pub fn calibrate_ptm(net: &MlpNetwork, ivs_spx: &IVSurface, ivs_vix: &IVSurface) -> Result<CalibrationResult> {
    check_arch(net, Arch::Ptm)?;
    let mut input = surface_values(ivs_spx, AssetClass::Spx)?;
    input.extend(surface_values(ivs_vix, AssetClass::Vix)?);
    let input = fill_masked(&input, &net.scaling.in_center);
    let raw = net.predict(&input)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("inverse network produced a non-finite parameter".into()));
    }
    let (lo, hi) = param_box();
    let x: Vec<f64> = raw.iter().enumerate().map(|(i, v)| v.clamp(lo[i], hi[i])).collect();
    Ok(CalibrationResult {
        method: Method::Ptm,
        omega_hat: x[..5].to_vec(),
        z0_hat: x[5..].to_vec(),
        objective: None,
        rmse_spx: None,
        rmse_vix: None,
        iterations: 0,
        converged: true,
        active_bounds: active_bounds(&x, &lo, &hi),
        restart: None,
        trace: vec![],
        restarts: vec![],
    })
}

/// The weighted least-squares objective over the forward networks, in normalised inputs.
pub struct MtpObjective<'a> {
    spx: &'a MlpNetwork,
    vix: &'a MlpNetwork,
    target: [Vec<f64>; 2],
    weight: [Vec<f64>; 2],
}

impl<'a> MtpObjective<'a> {
    pub fn new(
        spx: &'a MlpNetwork,
        vix: &'a MlpNetwork,
        target_spx: &[f64],
        target_vix: &[f64],
        weights_spx: Option<&[f64]>,
        weights_vix: Option<&[f64]>,
    ) -> Result<Self> {
        check_arch(spx, Arch::MtpSpx)?;
        check_arch(vix, Arch::MtpVix)?;
        if spx.scaling.in_center != vix.scaling.in_center || spx.scaling.in_scale != vix.scaling.in_scale {
            return Err(Error::domain("the SPX and VIX networks were trained on different parameter scalings"));
        }
        check_len(SURFACE_POINTS, target_spx.len())?;
        check_len(SURFACE_POINTS, target_vix.len())?;
        let weights = |w: Option<&[f64]>, t: &[f64]| -> Result<Vec<f64>> {
            let w = w.map(|w| w.to_vec()).unwrap_or_else(|| vec![1.0; SURFACE_POINTS]);
            check_len(SURFACE_POINTS, w.len())?;
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::domain("weights must be finite and nonnegative"));
            }
            // masked targets carry no weight
            Ok(w.iter().zip(t).map(|(w, t)| if t.is_finite() { *w } else { 0.0 }).collect())
        };
        let (ws, wv) = (weights(weights_spx, target_spx)?, weights(weights_vix, target_vix)?);
        let clean = |t: &[f64]| t.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect::<Vec<f64>>();
        Ok(MtpObjective { spx, vix, target: [clean(target_spx), clean(target_vix)], weight: [ws, wv] })
    }

    /// Raw parameter box mapped to network inputs.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = param_box();
        let s = &self.spx.scaling;
        let a = s.normalize_input(&lo);
        let b = s.normalize_input(&hi);
        (a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect(), a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
    }

    pub fn to_raw(&self, u: &[f64]) -> Vec<f64> {
        let s = &self.spx.scaling;
        u.iter().zip(&s.in_center).zip(&s.in_scale).map(|((u, c), k)| u / k + c).collect()
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        self.spx.scaling.normalize_input(x)
    }

    /// Model surfaces (raw vols) at normalised input `u`.
    pub fn surfaces(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.spx.scaling.denormalize_output(&self.spx.forward(u)?);
        let v = self.vix.scaling.denormalize_output(&self.vix.forward(u)?);
        Ok((s, v))
    }

    /// Objective value; writes the gradient with respect to `u`.
    pub fn value_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let mut scratch = vec![];
        let mut gx = vec![0.0; u.len()];
        for (side, net) in [self.spx, self.vix].into_iter().enumerate() {
            if self.weight[side].iter().all(|&w| w == 0.0) {
                continue;
            }
            let mut ws = net.workspace();
            let out = net.forward_into(u, &mut ws);
            let sc = &net.scaling;
            let mut upstream = vec![0.0; out.len()];
            for k in 0..out.len() {
                let r = out[k] * sc.out_scale[k] + sc.out_center[k] - self.target[side][k];
                let w = self.weight[side][k];
                total += w * r * r;
                upstream[k] = 2.0 * w * r * sc.out_scale[k];
            }
            scratch.resize(net.param_count(), 0.0);
            net.backward_into(&mut ws, &upstream, &mut scratch, Some(&mut gx));
            for (g, v) in grad.iter_mut().zip(&gx) {
                *g += v;
            }
        }
        total
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.value_grad(u, &mut vec![0.0; u.len()])
    }
}

/// Multi-start bounded quasi-Newton fit of the forward networks to the target surfaces.
/// `x_init` is a raw parameter vector; the default first start is the box centre.
pub fn calibrate_mtp(
    net_spx: &MlpNetwork,
    net_vix: &MlpNetwork,
    ivs_spx: &IVSurface,
    ivs_vix: &IVSurface,
    cfg: &CalibrationConfig,
    x_init: Option<&[f64]>,
) -> Result<CalibrationResult> {
    let t_spx = surface_values(ivs_spx, AssetClass::Spx)?;
    let t_vix = surface_values(ivs_vix, AssetClass::Vix)?;
    calibrate_mtp_values(net_spx, net_vix, &t_spx, &t_vix, cfg, x_init)
}

/// [`calibrate_mtp`] on flat vol vectors in the canonical grid order.
pub fn calibrate_mtp_values(
    net_spx: &MlpNetwork,
    net_vix: &MlpNetwork,
    t_spx: &[f64],
    t_vix: &[f64],
    cfg: &CalibrationConfig,
    x_init: Option<&[f64]>,
) -> Result<CalibrationResult> {
    let obj = MtpObjective::new(net_spx, net_vix, t_spx, t_vix, cfg.weights_spx.as_deref(), cfg.weights_vix.as_deref())?;
    if t_spx.iter().chain(t_vix).all(|v| !v.is_finite()) {
        return Err(Error::domain("target surfaces have no defined points"));
    }
    let (lo, hi) = obj.bounds();
    let restarts = cfg.restarts.max(1);
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| match (r, x_init) {
            (0, Some(x)) => {
                check_len(PARAM_DIM, x.len())?;
                Ok(obj.to_normalized(x))
            }
            (0, None) => Ok((0..PARAM_DIM).map(|i| 0.5 * (lo[i] + hi[i])).collect()),
            _ => Ok(halton(r, PARAM_DIM)
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let mid = 0.5 * (lo[i] + hi[i]);
                    mid + 0.9 * (h - 0.5) * (hi[i] - lo[i])
                })
                .collect()),
        })
        .collect::<Result<_>>()?;
    let runs: Vec<_> = starts
        .par_iter()
        .map(|x0| minimize_box(|u, g| obj.value_grad(u, g), x0, &lo, &hi, &cfg.lbfgs))
        .collect::<Result<_>>()?;
    let (best, run) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    let x = obj.to_raw(&run.x);
    let (plo, phi) = param_box();
    let x: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.clamp(plo[i], phi[i])).collect();
    let (ms, mv) = obj.surfaces(&run.x)?;
    Ok(CalibrationResult {
        method: Method::Mtp,
        omega_hat: x[..5].to_vec(),
        z0_hat: x[5..].to_vec(),
        objective: Some(run.f),
        rmse_spx: Some(surface_rmse(&ms, t_spx)).filter(|v| v.is_finite()),
        rmse_vix: Some(surface_rmse(&mv, t_vix)).filter(|v| v.is_finite()),
        iterations: run.iterations,
        converged: run.converged,
        active_bounds: active_bounds(&run.x, &lo, &hi),
        restart: Some(best),
        trace: run.trace.clone(),
        restarts: starts
            .iter()
            .zip(&runs)
            .map(|(s, r)| RestartSummary {
                start: obj.to_raw(s),
                objective: r.f,
                iterations: r.iterations,
                converged: r.converged,
                reason: r.reason.clone(),
            })
            .collect(),
    })
}

/// Surfaces produced by the forward networks at raw parameters `x`.
pub fn reconstruct(net_spx: &MlpNetwork, net_vix: &MlpNetwork, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((net_spx.predict(x)?, net_vix.predict(x)?))
}

/// Adds reconstruction errors to a direct calibration using the forward networks.
pub fn attach_reconstruction(
    result: &mut CalibrationResult,
    net_spx: &MlpNetwork,
    net_vix: &MlpNetwork,
    ivs_spx: &IVSurface,
    ivs_vix: &IVSurface,
) -> Result<()> {
    let (s, v) = reconstruct(net_spx, net_vix, &result.params())?;
    result.rmse_spx = Some(surface_rmse(&s, &ivs_spx.vols)).filter(|v| v.is_finite());
    result.rmse_vix = Some(surface_rmse(&v, &ivs_vix.vols)).filter(|v| v.is_finite());
    Ok(())
}

/// One row of a batch run over dated surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub label: String,
    pub result: CalibrationResult,
}

/// Rows `label,rmse_spx,rmse_vix,objective,converged,` then the fifteen parameters.
pub fn write_batch_csv<W: Write>(rows: &[BatchRow], mut w: W) -> Result<()> {
    writeln!(w, "label,rmse_spx,rmse_vix,objective,converged,{}", PARAM_NAMES.join(","))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        let params: Vec<String> = r.result.params().iter().map(|v| format!("{v}")).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.label,
            opt(r.result.rmse_spx),
            opt(r.result.rmse_vix),
            opt(r.result.objective),
            r.result.converged,
            params.join(",")
        )?;
    }
    Ok(())
}
