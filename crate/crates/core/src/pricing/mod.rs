//! Black-Scholes analytics, implied volatilities and Monte Carlo SPX/VIX surfaces.
//!
//! Rates and dividends are zero throughout. SPX prices are computed on the
//! normalised asset `S/S_0`, so strikes are `e^k`; VIX strikes are `F e^k` against
//! the model VIX futures `F = E[VIX_T]`.

mod black_scholes;
mod surface;
mod vix;

pub use black_scholes::{bs_delta, bs_delta_vega, bs_price, bs_vega, implied_vol, norm_cdf, norm_pdf};
pub use surface::{AssetClass, IVSurface, PriceEstimate, SurfaceGrid, MATURITIES, SPX_LOGM, SURFACE_POINTS, VIX_LOGM};
pub use vix::{nested_vix_squared, vix_squared_from_state, VixFunctional, VIX_WINDOW};

pub(crate) use surface::Moments;

use crate::error::{Error, Result};
use crate::kernel::KernelApprox;
use crate::mc::{reduce_paths, PathView, SimConfig, TimeGrid};
use crate::model::ModelParams;
use surface::surface_from_prices;

/// Moments over independent sampling units: single paths, or antithetic pairs
/// averaged. Pairs `(2j, 2j+1)` never straddle a parallel chunk.
#[derive(Debug, Clone)]
pub(crate) struct UnitMoments {
    moments: Moments,
    pending: Option<Vec<f64>>,
    antithetic: bool,
    total: usize,
}

impl UnitMoments {
    pub fn new(moments: Moments, antithetic: bool, total: usize) -> Self {
        UnitMoments { moments, pending: None, antithetic, total }
    }

    pub fn push(&mut self, index: usize, x: &[f64]) {
        if !self.antithetic {
            self.moments.push(x);
        } else if let Some(mut first) = self.pending.take() {
            for (a, b) in first.iter_mut().zip(x) {
                *a = 0.5 * (*a + b);
            }
            self.moments.push(&first);
        } else if index + 1 == self.total {
            self.moments.push(x);
        } else {
            self.pending = Some(x.to_vec());
        }
    }

    pub fn merge(self, other: UnitMoments) -> UnitMoments {
        UnitMoments { moments: self.moments.merge(other.moments), ..other }
    }

    pub fn estimate(&self) -> PriceEstimate {
        self.moments.estimate()
    }
}

fn estimate_with<F>(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    s0: f64,
    cfg: &SimConfig,
    proto: Moments,
    payoff: F,
) -> Result<PriceEstimate>
where
    F: Fn(&PathView, &mut [f64]) + Sync,
{
    let row = proto.row_len();
    let acc = reduce_paths(
        params,
        kernel,
        z0,
        s0,
        cfg,
        || (UnitMoments::new(proto.clone(), cfg.antithetic, cfg.paths), vec![0.0; row]),
        |(m, buf), path| {
            payoff(path, buf);
            m.push(path.index, buf);
        },
        |(a, buf), (b, _)| (a.merge(b), buf),
    )?;
    Ok(acc.0.estimate())
}

/// Monte Carlo mean and standard error of a vector payoff evaluated on each path.
pub fn estimate_payoffs<F>(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    s0: f64,
    cfg: &SimConfig,
    width: usize,
    payoff: F,
) -> Result<PriceEstimate>
where
    F: Fn(&PathView, &mut [f64]) + Sync,
{
    estimate_with(params, kernel, z0, s0, cfg, Moments::new(width), payoff)
}

fn grid_config(cfg: &SimConfig, grid: &SurfaceGrid) -> Result<(SimConfig, Vec<usize>)> {
    if let Some(&t) = grid.maturities.iter().find(|&&t| t > cfg.horizon + 1e-12) {
        return Err(Error::domain(format!("maturity {t} beyond simulation horizon {}", cfg.horizon)));
    }
    let cfg = cfg.clone().with_nodes(&grid.maturities);
    let times = cfg.time_grid()?;
    let idx = grid.maturities.iter().map(|&t| times.require_index(t)).collect::<Result<Vec<_>>>()?;
    Ok((cfg, idx))
}

fn report_masks(surface: &IVSurface) {
    let masked = surface.masked();
    if !masked.is_empty() {
        log::warn!("{} of {} {} grid points masked (no implied vol)", masked.len(), surface.len(), surface.asset_class.as_str());
    }
}

/// SPX call payoffs `(S_T - e^k)_+` followed by the controls `S_T`, one per maturity.
struct SpxPayoff {
    strikes: Vec<f64>,
    idx: Vec<usize>,
}

impl SpxPayoff {
    fn new(grid: &SurfaceGrid, idx: Vec<usize>) -> Self {
        SpxPayoff { strikes: grid.strikes_logm.iter().map(|k| k.exp()).collect(), idx }
    }

    fn width(&self) -> usize {
        self.strikes.len() * self.idx.len()
    }

    /// The discrete asset is a martingale, so `S_T` (mean 1) serves as a control
    /// variate for every call at maturity `T`.
    fn moments(&self) -> Moments {
        let nm = self.idx.len();
        let controls = (0..self.width()).map(|i| i % nm).collect();
        Moments::with_controls(self.width(), controls, vec![1.0; nm])
    }

    fn fill(&self, path: &PathView, out: &mut [f64]) {
        let nm = self.idx.len();
        for (i, k) in self.strikes.iter().enumerate() {
            for (j, &m) in self.idx.iter().enumerate() {
                out[i * nm + j] = (path.s[m] - k).max(0.0);
            }
        }
        let width = self.width();
        for (j, &m) in self.idx.iter().enumerate() {
            out[width + j] = path.s[m];
        }
    }
}

/// SPX call surface on the normalised asset `S_T/S_0`, strikes `e^k`.
pub fn price_spx_surface(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    cfg: &SimConfig,
    grid: &SurfaceGrid,
) -> Result<IVSurface> {
    let (cfg, idx) = grid_config(cfg, grid)?;
    let payoff = SpxPayoff::new(grid, idx);
    let est = estimate_with(params, kernel, z0, 1.0, &cfg, payoff.moments(), |path, out| payoff.fill(path, out))?;
    let surface = surface_from_prices(AssetClass::Spx, grid, &vec![1.0; grid.maturities.len()], &est);
    report_masks(&surface);
    Ok(surface)
}

/// `VIX_{T_j}` on every path, path-major, plus the time grid used.
pub fn simulate_vix(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    cfg: &SimConfig,
    maturities: &[f64],
) -> Result<(Vec<f64>, TimeGrid)> {
    let grid = SurfaceGrid::new(vec![0.0], maturities.to_vec())?;
    let (cfg, idx) = grid_config(cfg, &grid)?;
    let functional = VixFunctional::new(params, kernel, VIX_WINDOW)?;
    let values = reduce_paths(
        params,
        kernel,
        z0,
        1.0,
        &cfg,
        Vec::new,
        |acc: &mut Vec<f64>, path| acc.extend(idx.iter().map(|&m| functional.vix(path.factors(m)))),
        |mut a, b| {
            a.extend(b);
            a
        },
    )?;
    Ok((values, cfg.time_grid()?))
}

/// Futures and call surface from per-path VIX values (path-major, one per maturity).
fn vix_surface_from_values(values: &[f64], grid: &SurfaceGrid, cfg: &SimConfig) -> IVSurface {
    let nm = grid.maturities.len();
    let paths = values.len() / nm;
    let mut futures = vec![0.0; nm];
    for row in values.chunks(nm) {
        for (f, v) in futures.iter_mut().zip(row) {
            *f += v;
        }
    }
    for f in futures.iter_mut() {
        *f /= paths as f64;
    }
    let factors: Vec<f64> = grid.strikes_logm.iter().map(|k| k.exp()).collect();
    let mut acc = UnitMoments::new(Moments::new(grid.len()), cfg.antithetic, paths);
    let mut buf = vec![0.0; grid.len()];
    for (p, row) in values.chunks(nm).enumerate() {
        for (i, e) in factors.iter().enumerate() {
            for j in 0..nm {
                buf[i * nm + j] = (row[j] - futures[j] * e).max(0.0);
            }
        }
        acc.push(p, &buf);
    }
    let surface = surface_from_prices(AssetClass::Vix, grid, &futures, &acc.estimate());
    report_masks(&surface);
    surface
}

/// VIX call surface with log-moneyness quoted against the model VIX futures.
pub fn price_vix_surface(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    cfg: &SimConfig,
    grid: &SurfaceGrid,
) -> Result<IVSurface> {
    let (values, _) = simulate_vix(params, kernel, z0, cfg, &grid.maturities)?;
    Ok(vix_surface_from_values(&values, grid, cfg))
}

/// Both surfaces from one set of paths.
pub fn price_surfaces(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    cfg: &SimConfig,
    spx_grid: &SurfaceGrid,
    vix_grid: &SurfaceGrid,
) -> Result<(IVSurface, IVSurface)> {
    let mut nodes = spx_grid.maturities.clone();
    nodes.extend_from_slice(&vix_grid.maturities);
    let joint = SurfaceGrid::new(vec![0.0], nodes)?;
    let (cfg, _) = grid_config(cfg, &joint)?;
    let times = cfg.time_grid()?;
    let spx_idx = spx_grid.maturities.iter().map(|&t| times.require_index(t)).collect::<Result<Vec<_>>>()?;
    let vix_idx = vix_grid.maturities.iter().map(|&t| times.require_index(t)).collect::<Result<Vec<_>>>()?;
    let spx = SpxPayoff::new(spx_grid, spx_idx);
    let functional = VixFunctional::new(params, kernel, VIX_WINDOW)?;
    let row = spx.moments().row_len();
    let (spx_acc, _, vix_values) = reduce_paths(
        params,
        kernel,
        z0,
        1.0,
        &cfg,
        || (UnitMoments::new(spx.moments(), cfg.antithetic, cfg.paths), vec![0.0; row], Vec::new()),
        |(m, buf, vix), path| {
            spx.fill(path, buf);
            m.push(path.index, buf);
            vix.extend(vix_idx.iter().map(|&k| functional.vix(path.factors(k))));
        },
        |(a, buf, mut va), (b, _, vb)| {
            va.extend(vb);
            (a.merge(b), buf, va)
        },
    )?;
    let spx_surface = surface_from_prices(AssetClass::Spx, spx_grid, &vec![1.0; spx_grid.maturities.len()], &spx_acc.estimate());
    report_masks(&spx_surface);
    Ok((spx_surface, vix_surface_from_values(&vix_values, vix_grid, &cfg)))
}
