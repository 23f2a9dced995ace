//! Delta hedging of SPX calls with the model's hedge ratio
//! `δ = ∂P/∂S + (η/S) Σ_i ∂P/∂Z^i`.
//!
//! The ratio comes either from the forward SPX network (vol lookup plus Black-Scholes
//! greeks) or from a network trained on pathwise payoffs and derivatives. The factors
//! are driven by the same noise as the asset, so they are traced from realised returns:
//! `η √V ΔW = η ΔS/S`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::KernelApprox;
use crate::mc::{simulate, PathBundle, PathView, Scheme, Sensitivity, SimConfig, TimeGrid};
use crate::model::{FactorState, ModelParams};
use crate::nn::{train_dml, Arch, DmlData, History, MlpNetwork, Scaling, TrainConfig, DML_INPUTS, DML_MATURITIES};
use crate::pricing::{bs_delta_vega, bs_price, implied_vol, PriceEstimate, MATURITIES, SPX_LOGM};
use crate::rng::{derive_seed, stream};

/// Log-moneyness step of the central difference for the smile slope.
pub const SKEW_STEP: f64 = 0.01;
const MIN_VOL: f64 = 1e-4;
const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HedgeMethod {
    #[serde(rename = "mtp")]
    Mtp,
    #[serde(rename = "dml")]
    Dml,
    /// Black-Scholes delta at the implied vol of the first day.
    #[serde(rename = "bs")]
    BlackScholesFixed,
}

impl HedgeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HedgeMethod::Mtp => "mtp",
            HedgeMethod::Dml => "dml",
            HedgeMethod::BlackScholesFixed => "bs",
        }
    }
}

impl std::str::FromStr for HedgeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mtp" => Ok(HedgeMethod::Mtp),
            "dml" => Ok(HedgeMethod::Dml),
            "bs" | "black-scholes" => Ok(HedgeMethod::BlackScholesFixed),
            _ => Err(Error::Config(format!("unknown hedge method '{s}'"))),
        }
    }
}

/// Hedge ratio with the pieces it was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEval {
    pub ratio: f64,
    pub price: f64,
    pub dp_ds: f64,
    pub dp_dz: Vec<f64>,
    /// Interpolated implied vol (surface method only).
    pub vol: Option<f64>,
    /// The evaluation point was moved onto the network's grid.
    pub clamped: bool,
}

/// Bracket and upper weight of `x` on increasing `nodes`, clamping outside the hull.
fn bracket(nodes: &[f64], x: f64) -> (usize, f64, bool) {
    let last = nodes.len() - 1;
    if x <= nodes[0] {
        return (0, 0.0, x < nodes[0] - TIME_TOL);
    }
    if x >= nodes[last] {
        return (last - 1, 1.0, x > nodes[last] + TIME_TOL);
    }
    let i = nodes.partition_point(|&v| v <= x).saturating_sub(1).min(last - 1);
    (i, (x - nodes[i]) / (nodes[i + 1] - nodes[i]), false)
}

/// Bilinear weights of `(k, τ)` on the strike-major SPX grid.
fn surface_weights(k: f64, tau: f64) -> (Vec<f64>, bool) {
    let (i, wk, ck) = bracket(&SPX_LOGM, k);
    let (j, wt, ct) = bracket(&MATURITIES, tau);
    let m = MATURITIES.len();
    let mut w = vec![0.0; SPX_LOGM.len() * m];
    w[i * m + j] += (1.0 - wk) * (1.0 - wt);
    w[(i + 1) * m + j] += wk * (1.0 - wt);
    w[i * m + j + 1] += (1.0 - wk) * wt;
    w[(i + 1) * m + j + 1] += wk * wt;
    (w, ck || ct)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_state(params: &ModelParams, state: &FactorState, strike: f64, tau: f64) -> Result<()> {
    check_len(10, state.z.len())?;
    if !(state.s > 0.0) || !(strike > 0.0) || !(tau > 0.0) {
        return Err(Error::domain("spot, strike and time to maturity must be positive"));
    }
    params.validate()
}

fn assemble(eta: f64, s: f64, price: f64, dp_ds: f64, dp_dz: Vec<f64>, vol: Option<f64>, clamped: bool) -> RatioEval {
    let ratio = dp_ds + eta / s * dp_dz.iter().sum::<f64>();
    RatioEval { ratio, price, dp_ds, dp_dz, vol, clamped }
}

/// Hedge ratio from the forward SPX network: the vol at `(log(K/S), τ)` is read off the
/// bilinear interpolant of the network surface, its factor sensitivities come from one
/// reverse sweep, and the smile slope from a central difference of step [`SKEW_STEP`].
pub fn hedge_ratio_mtp(net: &MlpNetwork, params: &ModelParams, state: &FactorState, strike: f64, tau: f64) -> Result<RatioEval> {
    if net.arch != Arch::MtpSpx {
        return Err(Error::domain(format!("surface hedging needs the mtp-spx network, got {}", net.arch)));
    }
    check_state(params, state, strike, tau)?;
    let s = state.s;
    let mut x: Vec<f64> = params.omega().to_vec();
    x.extend_from_slice(&state.z);
    let k = (strike / s).ln();
    let kc = k.clamp(SPX_LOGM[0], SPX_LOGM[SPX_LOGM.len() - 1]);
    let (w, clamped) = surface_weights(k, tau);
    let (vols, grad) = net.predict_vjp(&x, &w)?;
    let sigma = dot(&w, &vols);
    let (up, dn) = ((kc + SKEW_STEP).min(SPX_LOGM[SPX_LOGM.len() - 1]), (kc - SKEW_STEP).max(SPX_LOGM[0]));
    let slope = (dot(&surface_weights(up, tau).0, &vols) - dot(&surface_weights(dn, tau).0, &vols)) / (up - dn);
    let floor = sigma < MIN_VOL;
    let sigma = sigma.max(MIN_VOL);
    let (delta, vega) = bs_delta_vega(s, strike, tau, sigma);
    let dp_ds = delta - vega * slope / s;
    let dp_dz: Vec<f64> = grad[5..].iter().map(|g| vega * g).collect();
    Ok(assemble(params.eta, s, bs_price(s, strike, tau, sigma), dp_ds, dp_dz, Some(sigma), clamped || floor))
}

fn dml_eval(net: &MlpNetwork, params: &ModelParams, state: &FactorState, strike: f64, tau: f64, clamp: bool) -> Result<RatioEval> {
    if net.arch != Arch::Dml {
        return Err(Error::domain(format!("differential hedging needs the dml network, got {}", net.arch)));
    }
    check_state(params, state, strike, tau)?;
    let (lo, hi) = (DML_MATURITIES[0], DML_MATURITIES[DML_MATURITIES.len() - 1]);
    let outside = tau < lo - TIME_TOL || tau > hi + TIME_TOL;
    if outside && !clamp {
        return Err(Error::domain(format!("time to maturity {tau} outside [{lo}, {hi}]")));
    }
    let (i, wt, _) = bracket(&DML_MATURITIES, tau);
    let mut w = vec![0.0; DML_MATURITIES.len()];
    w[i] = 1.0 - wt;
    w[i + 1] += wt;
    let mut x = vec![state.s];
    x.extend_from_slice(&state.z);
    let (prices, grad) = net.predict_vjp(&x, &w)?;
    Ok(assemble(params.eta, state.s, dot(&w, &prices), grad[0], grad[1..].to_vec(), None, outside))
}

/// Hedge ratio from the differential network, linear in time to maturity between outputs.
/// The network must have been trained for this strike.
pub fn hedge_ratio_dml(net: &MlpNetwork, params: &ModelParams, state: &FactorState, strike: f64, tau: f64) -> Result<RatioEval> {
    dml_eval(net, params, state, strike, tau, false)
}

/// How the differential network's training states are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmlSampling {
    pub samples: usize,
    pub validation: usize,
    /// `S_0` is uniform on `[lo, hi] × strike`.
    pub spot_lo: f64,
    pub spot_hi: f64,
    /// Each factor is uniform on `[-z_half_width, z_half_width]`.
    pub z_half_width: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for DmlSampling {
    fn default() -> Self {
        DmlSampling { samples: 50_000, validation: 5_000, spot_lo: 0.8, spot_hi: 1.25, z_half_width: 0.1, dt: 0.0012, seed: 0 }
    }
}

/// Single-path samples: states, payoffs per output maturity, and the averaged pathwise derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct DmlSamples {
    pub x: Vec<f64>,
    pub payoffs: Vec<f64>,
    pub grad: Vec<f64>,
    /// Samples dropped because the path was absorbed or ended on the strike.
    pub dropped: usize,
}

impl DmlSamples {
    pub fn len(&self) -> usize {
        self.x.len() / DML_INPUTS
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Draws states and simulates one path from each; sample `i` uses stream `i` of `seed`.
pub fn dml_samples(params: &ModelParams, kernel: &KernelApprox, strike: f64, sampling: &DmlSampling, offset: usize, count: usize) -> Result<DmlSamples> {
    check_len(DML_INPUTS - 1, kernel.n)?;
    if !(strike > 0.0) || !(sampling.spot_lo > 0.0) || !(sampling.spot_hi > sampling.spot_lo) || !(sampling.z_half_width >= 0.0) {
        return Err(Error::domain("bad differential sampling ranges"));
    }
    let horizon = DML_MATURITIES[DML_MATURITIES.len() - 1];
    let cfg = SimConfig::with_step(horizon, sampling.dt, 1, sampling.seed).with_nodes(&DML_MATURITIES);
    let grid = cfg.time_grid()?;
    let idx: Vec<usize> = DML_MATURITIES.iter().map(|&t| grid.require_index(t)).collect::<Result<_>>()?;
    let scheme = Scheme::new(params, kernel, grid)?;
    let n = kernel.n;
    let rows: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (offset..offset + count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(sampling.seed, i as u64);
            let s0 = strike * rng.random_range(sampling.spot_lo..sampling.spot_hi);
            let z0: Vec<f64> = (0..n)
                .map(|_| if sampling.z_half_width > 0.0 { rng.random_range(-sampling.z_half_width..sampling.z_half_width) } else { 0.0 })
                .collect();
            let mut path = PathView::new(n, scheme.steps());
            for k in 0..scheme.steps() {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                path.dw[k] = scheme.grid.dt(k).sqrt() * g;
            }
            scheme.run(&z0, s0, &mut path);
            let mut payoffs = Vec::with_capacity(idx.len());
            let mut avg = vec![0.0; n + 1];
            for &m in &idx {
                payoffs.push((path.s[m] - strike).max(0.0));
                match scheme.payoff_gradient(&path, strike, m) {
                    Sensitivity::Value(g) => avg.iter_mut().zip(&g).for_each(|(a, g)| *a += g / idx.len() as f64),
                    _ => return None,
                }
            }
            let mut x = vec![s0];
            x.extend(z0);
            Some((x, payoffs, avg))
        })
        .collect();
    let mut out = DmlSamples { x: vec![], payoffs: vec![], grad: vec![], dropped: 0 };
    for r in rows {
        match r {
            Some((x, y, g)) => {
                out.x.extend(x);
                out.payoffs.extend(y);
                out.grad.extend(g);
            }
            None => out.dropped += 1,
        }
    }
    Ok(out)
}

/// Generates samples and trains the differential network for one strike and parameter set.
pub fn train_hedging_network(
    params: &ModelParams,
    kernel: &KernelApprox,
    strike: f64,
    sampling: &DmlSampling,
    cfg: &TrainConfig,
) -> Result<(MlpNetwork, History)> {
    let train = dml_samples(params, kernel, strike, sampling, 0, sampling.samples)?;
    if train.is_empty() {
        return Err(Error::domain("no usable differential samples"));
    }
    let scaling = Scaling::fit_differential(DML_INPUTS, DML_MATURITIES.len(), &train.x, &train.payoffs)?;
    let data = DmlData::from_raw(&scaling, &train.x, &train.payoffs, &train.grad)?;
    let val = if sampling.validation > 0 {
        let v = dml_samples(params, kernel, strike, sampling, sampling.samples, sampling.validation)?;
        Some(DmlData::from_raw(&scaling, &v.x, &v.payoffs, &v.grad)?)
    } else {
        None
    };
    let mut net = MlpNetwork::new(Arch::Dml, scaling, derive_seed(cfg.seed, 7))?;
    let history = train_dml(&mut net, &data, val.as_ref(), cfg)?;
    Ok((net, history))
}

/// `0, Δt, 2Δt, …` strictly before `T`, then `T`.
pub fn rebalance_times(maturity: f64, dt: f64) -> Result<Vec<f64>> {
    if !(maturity > 0.0) || !(dt > 0.0) {
        return Err(Error::domain("maturity and rebalancing step must be positive"));
    }
    let mut t = vec![];
    let mut k = 0usize;
    while (k as f64) * dt < maturity - TIME_TOL {
        t.push(k as f64 * dt);
        k += 1;
    }
    t.push(maturity);
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeStep {
    pub t: f64,
    pub spot: f64,
    /// Ratio held from this date to the next; none at maturity.
    pub ratio: Option<f64>,
    pub j_delta: f64,
    pub j_p: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeRun {
    pub strike: f64,
    pub maturity: f64,
    pub rebalance_dt: f64,
    pub method: HedgeMethod,
    pub p0: f64,
    pub steps: Vec<HedgeStep>,
    /// Dates at which the ratio was evaluated off the network's grid.
    pub clamped: usize,
}

impl HedgeRun {
    pub fn terminal(&self) -> f64 {
        self.steps.last().map(|s| s.j).unwrap_or(0.0)
    }

    /// Rows `t,spot,ratio,J_delta,J_P,J`, plus the same P&L columns divided by `P_0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,spot,ratio,J_delta,J_P,J,J_delta_over_P0,J_P_over_P0,J_over_P0")?;
        for s in &self.steps {
            let r = s.ratio.map(|r| r.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.t,
                s.spot,
                r,
                s.j_delta,
                s.j_p,
                s.j,
                s.j_delta / self.p0,
                s.j_p / self.p0,
                s.j / self.p0
            )?;
        }
        Ok(())
    }
}

/// P&L bookkeeping on one price path. `prices[k]` is the option value at `times[k]`
/// (the payoff at maturity); `ratio(k)` may only look at information up to `times[k]`.
pub fn hedge_path<F>(
    times: &[f64],
    spots: &[f64],
    prices: &[f64],
    p0: f64,
    mut ratio: F,
) -> Result<(Vec<HedgeStep>, usize)>
where
    F: FnMut(usize) -> Result<(f64, bool)>,
{
    check_len(times.len(), spots.len())?;
    check_len(times.len(), prices.len())?;
    if times.len() < 2 {
        return Err(Error::domain("hedging needs at least two dates"));
    }
    let last = times.len() - 1;
    let mut steps = Vec::with_capacity(times.len());
    let mut j_delta = 0.0;
    let mut clamped = 0;
    for k in 0..=last {
        let held = if k < last {
            let (r, c) = ratio(k)?;
            if !r.is_finite() {
                return Err(Error::Numerical(format!("hedge ratio is {r} at t = {}", times[k])));
            }
            clamped += c as usize;
            Some(r)
        } else {
            None
        };
        let j_p = prices[k] - p0;
        steps.push(HedgeStep { t: times[k], spot: spots[k], ratio: held, j_delta, j_p, j: j_delta - j_p });
        if let Some(r) = held {
            j_delta += r * (spots[k + 1] - spots[k]);
        }
    }
    Ok((steps, clamped))
}

/// The trained networks available to a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hedgers<'a> {
    pub mtp: Option<&'a MlpNetwork>,
    pub dml: Option<&'a MlpNetwork>,
}

/// Evaluates one method at a state; `bs_vol` is the fixed Black-Scholes vol.
fn method_ratio(method: HedgeMethod, nets: Hedgers, params: &ModelParams, state: &FactorState, strike: f64, tau: f64, bs_vol: Option<f64>) -> Result<RatioEval> {
    match method {
        HedgeMethod::Mtp => hedge_ratio_mtp(nets.mtp.ok_or_else(|| Error::Config("the mtp method needs an SPX network".into()))?, params, state, strike, tau),
        HedgeMethod::Dml => dml_eval(nets.dml.ok_or_else(|| Error::Config("the dml method needs a differential network".into()))?, params, state, strike, tau, true),
        HedgeMethod::BlackScholesFixed => {
            let bs_vol = bs_vol.ok_or_else(|| Error::NoSolution("the initial option price has no implied vol".into()))?;
            let (delta, _) = bs_delta_vega(state.s, strike, tau, bs_vol);
            Ok(RatioEval { ratio: delta, price: bs_price(state.s, strike, tau, bs_vol), dp_ds: delta, dp_dz: vec![0.0; state.z.len()], vol: Some(bs_vol), clamped: false })
        }
    }
}

/// The price used for the option leg before maturity: the surface network if present,
/// else the differential network, else Black-Scholes at the fixed vol.
fn proxy_method(nets: Hedgers) -> HedgeMethod {
    if nets.mtp.is_some() {
        HedgeMethod::Mtp
    } else if nets.dml.is_some() {
        HedgeMethod::Dml
    } else {
        HedgeMethod::BlackScholesFixed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSetup {
    pub params: ModelParams,
    pub z0: Vec<f64>,
    pub s0: f64,
    pub strike: f64,
    pub maturity: f64,
    pub sim_dt: f64,
    /// Paths for the initial price.
    pub price_paths: usize,
    /// The first this many of them are hedged.
    pub hedge_paths: usize,
    pub seed: u64,
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        let r = crate::model::hedging_reference();
        SyntheticSetup { params: r.params, z0: r.z0, s0: 100.0, strike: 98.0, maturity: 0.08, sim_dt: 0.0012, price_paths: 50_000, hedge_paths: 5_000, seed: 0 }
    }
}

impl SyntheticSetup {
    /// Simulation dates: multiples of `sim_dt`, every rebalancing date, and maturity.
    pub fn sim_config(&self, paths: usize, rebalance_dts: &[f64]) -> Result<SimConfig> {
        let mut nodes = rebalance_times(self.maturity, self.sim_dt)?;
        for &dt in rebalance_dts {
            if dt < self.sim_dt - TIME_TOL {
                return Err(Error::domain(format!("rebalancing step {dt} is finer than the simulation step {}", self.sim_dt)));
            }
            nodes.extend(rebalance_times(self.maturity, dt)?);
        }
        nodes.retain(|&t| t > 0.0);
        Ok(SimConfig::new(self.maturity, 1, paths, self.seed).with_nodes(&nodes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub mean_ratio: Option<f64>,
    pub mean_j_delta: f64,
    pub mean_j_p: f64,
    pub mean_j: f64,
    pub std_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeSummary {
    pub method: HedgeMethod,
    pub rebalance_dt: f64,
    pub paths: usize,
    pub p0: f64,
    pub mean: f64,
    pub std: f64,
    pub mean_over_p0: f64,
    pub std_over_p0: f64,
    /// `(level, quantile of J_T / P_0)`.
    pub quantiles: Vec<(f64, f64)>,
    pub clamped_fraction: f64,
    pub series: Vec<SeriesPoint>,
    /// `J_T` per hedged path.
    pub terminal: Vec<f64>,
}

impl HedgeSummary {
    /// `bin_lo,bin_hi,count` of `J_T / P_0`.
    pub fn write_histogram<W: Write>(&self, bins: usize, mut w: W) -> Result<()> {
        let scaled: Vec<f64> = self.terminal.iter().map(|j| j / self.p0).collect();
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for v in &scaled {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (b, c) in counts.iter().enumerate() {
            writeln!(w, "{},{},{}", lo + b as f64 * width, lo + (b + 1) as f64 * width, c)?;
        }
        Ok(())
    }

    /// `t,mean_ratio,mean_J_delta,mean_J_P,mean_J,std_J`.
    pub fn write_series<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean_ratio,mean_J_delta,mean_J_P,mean_J,std_J")?;
        for p in &self.series {
            let r = p.mean_ratio.map(|r| r.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{}", p.t, r, p.mean_j_delta, p.mean_j_p, p.mean_j, p.std_j)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub setup: SyntheticSetup,
    pub p0: f64,
    pub p0_std_error: f64,
    /// Implied vol of `P_0`, used by the Black-Scholes baseline.
    pub bs_vol: Option<f64>,
    pub summaries: Vec<HedgeSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() { sorted[i] * (1.0 - f) + sorted[i + 1] * f } else { sorted[i] }
}

/// Monte Carlo price of the call from `price_paths` paths.
pub fn synthetic_price(kernel: &KernelApprox, setup: &SyntheticSetup, rebalance_dts: &[f64]) -> Result<PriceEstimate> {
    let cfg = setup.sim_config(setup.price_paths, rebalance_dts)?;
    let steps = cfg.time_grid()?.steps();
    let strike = setup.strike;
    crate::pricing::estimate_payoffs(&setup.params, kernel, &setup.z0, setup.s0, &cfg, 1, |p, out| out[0] = (p.s[steps] - strike).max(0.0))
}

/// Hedges the first `hedge_paths` simulated paths with every method at every rebalancing step.
pub fn run_hedge_synthetic(
    kernel: &KernelApprox,
    setup: &SyntheticSetup,
    rebalance_dts: &[f64],
    methods: &[HedgeMethod],
    nets: Hedgers,
) -> Result<SyntheticReport> {
    if setup.hedge_paths == 0 || setup.hedge_paths > setup.price_paths {
        return Err(Error::domain("need 0 < hedge_paths <= price_paths"));
    }
    let price = synthetic_price(kernel, setup, rebalance_dts)?;
    let (p0, p0_se) = (price.mean[0], price.std_error[0]);
    let bs_vol = implied_vol(p0, setup.s0, setup.strike, setup.maturity).ok();
    let paths = SyntheticPaths::simulate(kernel, setup, rebalance_dts)?;
    let mut summaries = vec![];
    for &dt in rebalance_dts {
        let times = rebalance_times(setup.maturity, dt)?;
        for (method, runs) in paths.runs(&times, methods, nets, p0, bs_vol)? {
            summaries.push(summarize(method, dt, p0, &times, &runs));
        }
    }
    Ok(SyntheticReport { setup: setup.clone(), p0, p0_std_error: p0_se, bs_vol, summaries })
}

/// Per-path hedge runs at one rebalancing interval, with the option marked at `p0`
/// at inception.
pub fn synthetic_path_runs(
    kernel: &KernelApprox,
    setup: &SyntheticSetup,
    rebalance_dt: f64,
    method: HedgeMethod,
    nets: Hedgers,
    p0: f64,
) -> Result<Vec<HedgeRun>> {
    let bs_vol = implied_vol(p0, setup.s0, setup.strike, setup.maturity).ok();
    let paths = SyntheticPaths::simulate(kernel, setup, &[rebalance_dt])?;
    let times = rebalance_times(setup.maturity, rebalance_dt)?;
    let (_, runs) = paths.runs(&times, &[method], nets, p0, bs_vol)?.pop().expect("one method");
    Ok(runs
        .into_iter()
        .map(|(steps, clamped)| HedgeRun {
            strike: setup.strike,
            maturity: setup.maturity,
            rebalance_dt,
            method,
            p0,
            steps,
            clamped,
        })
        .collect())
}

struct SyntheticPaths<'a> {
    setup: &'a SyntheticSetup,
    bundle: PathBundle,
    grid: TimeGrid,
}

impl<'a> SyntheticPaths<'a> {
    fn simulate(kernel: &KernelApprox, setup: &'a SyntheticSetup, rebalance_dts: &[f64]) -> Result<Self> {
        if setup.hedge_paths == 0 {
            return Err(Error::domain("need at least one hedge path"));
        }
        let cfg = setup.sim_config(setup.hedge_paths, rebalance_dts)?;
        let bundle = simulate(&setup.params, kernel, &setup.z0, setup.s0, &cfg)?;
        let grid = TimeGrid::build(cfg.horizon, cfg.steps, &cfg.nodes)?;
        Ok(SyntheticPaths { setup, bundle, grid })
    }

    #[allow(clippy::type_complexity)]
    fn runs(
        &self,
        times: &[f64],
        methods: &[HedgeMethod],
        nets: Hedgers,
        p0: f64,
        bs_vol: Option<f64>,
    ) -> Result<Vec<(HedgeMethod, Vec<(Vec<HedgeStep>, usize)>)>> {
        let (setup, bundle) = (self.setup, &self.bundle);
        let idx: Vec<usize> = times.iter().map(|&t| self.grid.require_index(t)).collect::<Result<_>>()?;
        let proxy = proxy_method(nets);
        // option leg shared by every method
        let prices: Vec<Vec<f64>> = (0..setup.hedge_paths)
            .into_par_iter()
            .map(|p| {
                idx.iter()
                    .enumerate()
                    .map(|(n, &k)| {
                        let s = bundle.s_at(p, k);
                        if n == 0 {
                            return Ok(p0);
                        }
                        if n + 1 == idx.len() {
                            return Ok((s - setup.strike).max(0.0));
                        }
                        let state = FactorState::new(s, bundle.z_at(p, k).to_vec());
                        Ok(method_ratio(proxy, nets, &setup.params, &state, setup.strike, setup.maturity - times[n], bs_vol)?.price)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        methods
            .iter()
            .map(|&method| {
                let runs = (0..setup.hedge_paths)
                    .into_par_iter()
                    .map(|p| {
                        let spots: Vec<f64> = idx.iter().map(|&k| bundle.s_at(p, k)).collect();
                        hedge_path(times, &spots, &prices[p], p0, |n| {
                            let state = FactorState::new(spots[n], bundle.z_at(p, idx[n]).to_vec());
                            let r = method_ratio(method, nets, &setup.params, &state, setup.strike, setup.maturity - times[n], bs_vol)?;
                            Ok((r.ratio, r.clamped))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((method, runs))
            })
            .collect()
    }
}

fn summarize(method: HedgeMethod, dt: f64, p0: f64, times: &[f64], runs: &[(Vec<HedgeStep>, usize)]) -> HedgeSummary {
    let terminal: Vec<f64> = runs.iter().map(|(s, _)| s.last().expect("nonempty").j).collect();
    let (mean, std) = mean_std(&terminal);
    let mut sorted: Vec<f64> = terminal.iter().map(|j| j / p0).collect();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99].iter().map(|&q| (q, quantile(&sorted, q))).collect();
    let clamped: usize = runs.iter().map(|(_, c)| c).sum();
    let series = (0..times.len())
        .map(|k| {
            let col = |f: &dyn Fn(&HedgeStep) -> f64| runs.iter().map(|(s, _)| f(&s[k])).collect::<Vec<f64>>();
            let js = col(&|s| s.j);
            let (mj, sj) = mean_std(&js);
            let ratios: Vec<f64> = runs.iter().filter_map(|(s, _)| s[k].ratio).collect();
            SeriesPoint {
                t: times[k],
                mean_ratio: if ratios.is_empty() { None } else { Some(mean_std(&ratios).0) },
                mean_j_delta: mean_std(&col(&|s| s.j_delta)).0,
                mean_j_p: mean_std(&col(&|s| s.j_p)).0,
                mean_j: mj,
                std_j: sj,
            }
        })
        .collect();
    HedgeSummary {
        method,
        rebalance_dt: dt,
        paths: runs.len(),
        p0,
        mean,
        std,
        mean_over_p0: mean / p0,
        std_over_p0: std / p0,
        quantiles,
        clamped_fraction: clamped as f64 / (runs.len() * (times.len() - 1)) as f64,
        series,
        terminal,
    }
}

/// A daily series of spot and option price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub dates: Vec<String>,
    pub spot: Vec<f64>,
    pub option: Vec<f64>,
}

/// Days since 1970-01-01 of an ISO `YYYY-MM-DD` date.
fn day_number(date: &str) -> Option<i64> {
    let mut it = date.split('-');
    let y: i64 = it.next()?.parse().ok()?;
    let m: i64 = it.next()?.parse().ok()?;
    let d: i64 = it.next()?.parse().ok()?;
    if it.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Some(era * 146_097 + doe - 719_468)
}

impl MarketSeries {
    /// Parses `date,spot,option_price` rows. Empty values, unordered dates or more than
    /// four calendar days between rows are reported as gaps.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut s = MarketSeries { dates: vec![], spot: vec![], option: vec![] };
        let mut prev: Option<i64> = None;
        let mut first = true;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if std::mem::take(&mut first) && line.starts_with("date") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 3 {
                return Err(Error::format(format!("line {}: expected date,spot,option_price", n + 1)));
            }
            if cols[1].is_empty() || cols[2].is_empty() {
                return Err(Error::Gap(format!("missing value on {}", cols[0])));
            }
            let day = day_number(cols[0]).ok_or_else(|| Error::format(format!("line {}: bad date '{}'", n + 1, cols[0])))?;
            if let Some(p) = prev {
                if day <= p {
                    return Err(Error::format(format!("line {}: dates must increase", n + 1)));
                }
                if day - p > 4 {
                    return Err(Error::Gap(format!("{} calendar days missing before {}", day - p - 1, cols[0])));
                }
            }
            prev = Some(day);
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::format(format!("line {}: bad number '{v}'", n + 1)));
            let (spot, option) = (num(cols[1])?, num(cols[2])?);
            if !(spot > 0.0) || !(option >= 0.0) {
                return Err(Error::format(format!("line {}: spot must be positive and option price nonnegative", n + 1)));
            }
            s.dates.push(cols[0].to_string());
            s.spot.push(spot);
            s.option.push(option);
        }
        if s.spot.len() < 2 {
            return Err(Error::format("a market series needs at least two dates"));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.spot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spot.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketSetup {
    pub strike: f64,
    /// Time to maturity on the first date, in years.
    pub maturity: f64,
    /// Year fraction between consecutive rows.
    pub day_dt: f64,
}

impl Default for MarketSetup {
    fn default() -> Self {
        MarketSetup { strike: 1.0, maturity: 0.08, day_dt: 1.0 / 252.0 }
    }
}

/// Factor values traced from observed returns:
/// `Z^i_{k+1} = (Z^i_k - λ Z_k Δt + η ΔS/S) / (1 + γ_i Δt)`.
pub fn trace_factors(params: &ModelParams, kernel: &KernelApprox, z0: &[f64], spot: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
    check_len(kernel.n, z0.len())?;
    let mut out = vec![z0.to_vec()];
    for k in 1..spot.len() {
        let z = &out[k - 1];
        let agg = dot(&kernel.c, z);
        let shock = -params.lambda * agg * dt + params.eta * (spot[k] - spot[k - 1]) / spot[k - 1];
        out.push(z.iter().zip(&kernel.gamma).map(|(z, g)| (z + shock) / (1.0 + g * dt)).collect());
    }
    Ok(out)
}

/// Daily hedge of a quoted call. `daily` optionally supplies parameters recalibrated on each
/// date (factors are still traced from returns); otherwise the first-day parameters are kept.
#[allow(clippy::too_many_arguments)]
pub fn run_hedge_market(
    series: &MarketSeries,
    setup: &MarketSetup,
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    method: HedgeMethod,
    nets: Hedgers,
    daily: Option<&[ModelParams]>,
) -> Result<HedgeRun> {
    if let Some(d) = daily {
        check_len(series.len(), d.len())?;
    }
    let last_tau = setup.maturity - (series.len() - 1) as f64 * setup.day_dt;
    if last_tau < -TIME_TOL {
        return Err(Error::domain("the series runs past the option's maturity"));
    }
    let times: Vec<f64> = (0..series.len()).map(|k| k as f64 * setup.day_dt).collect();
    let factors = trace_factors(params, kernel, z0, &series.spot, setup.day_dt)?;
    let p0 = series.option[0];
    let bs_vol = implied_vol(p0, series.spot[0], setup.strike, setup.maturity).ok();
    let (steps, clamped) = hedge_path(&times, &series.spot, &series.option, p0, |k| {
        let p = daily.map(|d| &d[k]).unwrap_or(params);
        let state = FactorState::new(series.spot[k], factors[k].clone());
        let r = method_ratio(method, nets, p, &state, setup.strike, setup.maturity - times[k], bs_vol)?;
        Ok((r.ratio, r.clamped))
    })?;
    Ok(HedgeRun { strike: setup.strike, maturity: setup.maturity, rebalance_dt: setup.day_dt, method, p0, steps, clamped })
}
