//! Implied-volatility surfaces on fixed (log-moneyness × maturity) grids.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::black_scholes::{bs_vega, implied_vol};
use crate::error::{check_len, Error, Result};

pub const SPX_LOGM: [f64; 15] =
    [-0.15, -0.12, -0.1, -0.08, -0.05, -0.04, -0.03, -0.02, -0.01, 0.0, 0.01, 0.02, 0.03, 0.04, 0.05];
pub const VIX_LOGM: [f64; 15] =
    [-0.1, -0.05, -0.03, -0.01, 0.01, 0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15, 0.17, 0.19, 0.21];
pub const MATURITIES: [f64; 4] = [0.03, 0.05, 0.07, 0.09];
/// Points per default surface.
pub const SURFACE_POINTS: usize = SPX_LOGM.len() * MATURITIES.len();

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssetClass {
    #[serde(rename = "SPX")]
    Spx,
    #[serde(rename = "VIX")]
    Vix,
}

impl AssetClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AssetClass::Spx => "SPX",
            AssetClass::Vix => "VIX",
        }
    }
}

impl std::str::FromStr for AssetClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SPX" => Ok(AssetClass::Spx),
            "VIX" => Ok(AssetClass::Vix),
            other => Err(Error::Config(format!("unknown asset class {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub strikes_logm: Vec<f64>,
    pub maturities: Vec<f64>,
}

impl SurfaceGrid {
    pub fn new(strikes_logm: Vec<f64>, maturities: Vec<f64>) -> Result<Self> {
        if strikes_logm.is_empty() || maturities.is_empty() || maturities.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::domain("surface grid needs strikes and positive maturities"));
        }
        Ok(SurfaceGrid { strikes_logm, maturities })
    }

    pub fn default_for(class: AssetClass) -> Self {
        let k = match class {
            AssetClass::Spx => SPX_LOGM,
            AssetClass::Vix => VIX_LOGM,
        };
        SurfaceGrid { strikes_logm: k.to_vec(), maturities: MATURITIES.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.strikes_logm.len() * self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Strike-major flat index.
    pub fn index(&self, strike: usize, maturity: usize) -> usize {
        strike * self.maturities.len() + maturity
    }

    /// `(logm, maturity)` of each flat index, in storage order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.strikes_logm.iter().flat_map(move |&k| self.maturities.iter().map(move |&t| (k, t)))
    }
}

/// A surface flattened strike-major: entry `i * #maturities + j` is strike `i`, maturity `j`.
/// Undefined points hold NaN (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVSurface {
    pub asset_class: AssetClass,
    pub strikes_logm: Vec<f64>,
    pub maturities: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub vols: Vec<f64>,
    #[serde(default, with = "nan_as_null_opt", skip_serializing_if = "Option::is_none")]
    pub ci_half: Option<Vec<f64>>,
    /// Level the log-moneyness strikes refer to, per maturity (1 for normalised SPX,
    /// the model VIX futures for VIX). Empty means 1 throughout.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forwards: Vec<f64>,
}

impl IVSurface {
    pub fn new(asset_class: AssetClass, grid: &SurfaceGrid, vols: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), vols.len())?;
        Ok(IVSurface {
            asset_class,
            strikes_logm: grid.strikes_logm.clone(),
            maturities: grid.maturities.clone(),
            vols,
            ci_half: None,
            forwards: Vec::new(),
        })
    }

    pub fn grid(&self) -> SurfaceGrid {
        SurfaceGrid { strikes_logm: self.strikes_logm.clone(), maturities: self.maturities.clone() }
    }

    pub fn len(&self) -> usize {
        self.vols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vols.is_empty()
    }

    pub fn vol(&self, strike: usize, maturity: usize) -> f64 {
        self.vols[strike * self.maturities.len() + maturity]
    }

    pub fn valid(&self) -> Vec<bool> {
        self.vols.iter().map(|v| v.is_finite()).collect()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.vols.iter().filter(|v| v.is_finite()).count() as f64 / self.vols.len().max(1) as f64
    }

    /// Indices of masked points.
    pub fn masked(&self) -> Vec<usize> {
        self.vols.iter().enumerate().filter(|(_, v)| !v.is_finite()).map(|(i, _)| i).collect()
    }

    /// Rows `asset_class,logm,maturity,vol,ci_half`; masked values are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "asset_class,logm,maturity,vol,ci_half")?;
        }
        let fmt = |x: f64| if x.is_finite() { format!("{x}") } else { String::new() };
        for (idx, (k, t)) in self.grid().points().enumerate() {
            let ci = self.ci_half.as_ref().map(|c| c[idx]).unwrap_or(f64::NAN);
            writeln!(w, "{},{k},{t},{},{}", self.asset_class.as_str(), fmt(self.vols[idx]), fmt(ci))?;
        }
        Ok(())
    }

    /// Parses the [`write_csv`](Self::write_csv) layout. Rows may come in any order but must
    /// cover a full grid; an empty `vol` is a masked point.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut rows = vec![];
        let mut class = None;
        let mut seen_header = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header && rows.is_empty() && line.starts_with("asset_class") {
                seen_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 4 {
                return Err(Error::format(format!("line {}: expected asset_class,logm,maturity,vol[,ci_half]", n + 1)));
            }
            let c: AssetClass = cols[0].parse()?;
            if class.is_some_and(|k| k != c) {
                return Err(Error::format(format!("line {}: mixed asset classes", n + 1)));
            }
            class = Some(c);
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::format(format!("line {}: bad {what} '{s}'", n + 1)))
            };
            let vol = if cols[3].is_empty() { f64::NAN } else { num(cols[3], "vol")? };
            let ci = match cols.get(4) {
                Some(s) if !s.is_empty() => num(s, "ci_half")?,
                _ => f64::NAN,
            };
            rows.push((num(cols[1], "logm")?, num(cols[2], "maturity")?, vol, ci));
        }
        let class = class.ok_or_else(|| Error::format("surface file has no rows"))?;
        let mut strikes: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut mats: Vec<f64> = rows.iter().map(|r| r.1).collect();
        for v in [&mut strikes, &mut mats] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let grid = SurfaceGrid::new(strikes, mats)?;
        if rows.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} rows do not form a full {}-point grid", rows.len(), grid.len())));
        }
        let mut vols = vec![f64::NAN; grid.len()];
        let mut ci = vec![f64::NAN; grid.len()];
        let mut seen = vec![false; grid.len()];
        for (k, t, v, c) in rows {
            let i = grid.strikes_logm.iter().position(|&x| x == k).expect("collected");
            let j = grid.maturities.iter().position(|&x| x == t).expect("collected");
            let idx = grid.index(i, j);
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::GridMismatch(format!("duplicate point ({k}, {t})")));
            }
            vols[idx] = v;
            ci[idx] = c;
        }
        let mut surface = IVSurface::new(class, &grid, vols)?;
        if ci.iter().any(|c| c.is_finite()) {
            surface.ci_half = Some(ci);
        }
        Ok(surface)
    }

    /// Errors unless the surface sits on `grid` (up to 1e-12 in each coordinate).
    pub fn check_grid(&self, grid: &SurfaceGrid) -> Result<()> {
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
        if !close(&self.strikes_logm, &grid.strikes_logm) || !close(&self.maturities, &grid.maturities) {
            return Err(Error::GridMismatch(format!(
                "{} surface is on {}×{} strikes×maturities, expected {}×{}",
                self.asset_class.as_str(),
                self.strikes_logm.len(),
                self.maturities.len(),
                grid.strikes_logm.len(),
                grid.maturities.len()
            )));
        }
        Ok(())
    }
}

/// Monte Carlo price estimates on a grid of payoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Independent samples (pairs count once under antithetic variates).
    pub samples: usize,
}

/// Streaming moments of payoff vectors, optionally with one linear control variate
/// per payoff.
///
/// Each pushed row is `width` payoffs followed by the control values. Payoff `i` is
/// paired with control `controls[i]`, whose expectation `control_means[..]` is known;
/// the estimate is `ȳ - β (x̄ - E[x])` with the regression slope `β = cov(y, x) / var(x)`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    count: usize,
    width: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    controls: Vec<usize>,
    control_means: Vec<f64>,
    cross: Vec<f64>,
}

impl Moments {
    pub fn new(width: usize) -> Self {
        Self::with_controls(width, Vec::new(), Vec::new())
    }

    pub fn with_controls(width: usize, controls: Vec<usize>, control_means: Vec<f64>) -> Self {
        let total = width + control_means.len();
        Moments {
            count: 0,
            width,
            sum: vec![0.0; total],
            sumsq: vec![0.0; total],
            cross: vec![0.0; if controls.is_empty() { 0 } else { width }],
            controls,
            control_means,
        }
    }

    /// Length of a pushed row.
    pub fn row_len(&self) -> usize {
        self.sum.len()
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(self.sumsq.iter_mut()).zip(x) {
            *s += v;
            *q += v * v;
        }
        for (i, c) in self.cross.iter_mut().enumerate() {
            *c += x[i] * x[self.width + self.controls[i]];
        }
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(other.sumsq) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(other.cross) {
            *a += b;
        }
        self
    }

    pub fn estimate(&self) -> PriceEstimate {
        let n = self.count as f64;
        let mut mean = Vec::with_capacity(self.width);
        let mut std_error = Vec::with_capacity(self.width);
        let var_of = |k: usize| ((self.sumsq[k] / n - (self.sum[k] / n).powi(2)) * n / (n - 1.0)).max(0.0);
        for i in 0..self.width {
            let y = self.sum[i] / n;
            let var_y = var_of(i);
            if self.controls.is_empty() {
                mean.push(y);
                std_error.push(if self.count < 2 { f64::NAN } else { (var_y / n).sqrt() });
                continue;
            }
            let xk = self.width + self.controls[i];
            let x = self.sum[xk] / n;
            let var_x = var_of(xk);
            let cov = (self.cross[i] / n - x * y) * n / (n - 1.0);
            let beta = if var_x > 0.0 { cov / var_x } else { 0.0 };
            mean.push(y - beta * (x - self.control_means[self.controls[i]]));
            let resid = (var_y - beta * cov).max(0.0);
            std_error.push(if self.count < 3 { f64::NAN } else { (resid / n).sqrt() });
        }
        PriceEstimate { mean, std_error, samples: self.count }
    }
}

/// Converts call prices on `forward · e^k` strikes into vols and 95% vol half-widths.
/// Points whose price falls outside the no-arbitrage bounds are masked.
pub(crate) fn surface_from_prices(
    class: AssetClass,
    grid: &SurfaceGrid,
    forwards: &[f64],
    est: &PriceEstimate,
) -> IVSurface {
    let mut vols = Vec::with_capacity(grid.len());
    let mut ci = Vec::with_capacity(grid.len());
    for (idx, (k, t)) in grid.points().enumerate() {
        let forward = forwards[idx % grid.maturities.len()];
        let strike = forward * k.exp();
        let price = est.mean[idx];
        // a price within rounding of intrinsic carries no volatility information
        let solved = if price - (forward - strike).max(0.0) <= 1e-12 * forward {
            Err(Error::NoSolution(format!("price {price} at intrinsic")))
        } else {
            implied_vol(price, forward, strike, t)
        };
        match solved {
            Ok(v) => {
                let vega = bs_vega(forward, strike, t, v);
                vols.push(v);
                ci.push(if vega > 0.0 { Z95 * est.std_error[idx] / vega } else { f64::INFINITY });
            }
            Err(e) => {
                log::debug!("masking {class:?} point k={k} T={t}: {e}");
                vols.push(f64::NAN);
                ci.push(f64::NAN);
            }
        }
    }
    IVSurface {
        asset_class: class,
        strikes_logm: grid.strikes_logm.clone(),
        maturities: grid.maturities.clone(),
        vols,
        ci_half: Some(ci),
        forwards: forwards.to_vec(),
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

mod nan_as_null_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|v| v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Option<Vec<Option<f64>>> = Option::deserialize(d)?;
        Ok(raw.map(|v| v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()))
    }
}
