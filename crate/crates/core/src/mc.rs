//! Monte Carlo engine for the lifted model.
//!
//! One step of the explicit-implicit Euler scheme, with `ΔW` shared by the
//! asset and every factor:
//!
//! ```text
//! V_k       = a φ(Z_k - b) + c,        Z_k = Σ c_i Z^i_k
//! S_{k+1}   = S_k (1 + √V_k ΔW)
//! Z^i_{k+1} = (Z^i_k - λ Z_k Δt + η √V_k ΔW) / (1 + γ_i Δt)
//! ```
//!
//! The mean reversion is implicit, so the scheme stays bounded for `γ_i Δt ≫ 1`.

use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::KernelApprox;
use crate::model::{dot, ModelParams};
use crate::rng;

/// Paths whose asset level would cross zero are absorbed here.
pub const ASSET_FLOOR: f64 = 1e-12;
/// Relative distance to the strike below which a pathwise derivative is undefined.
pub const KINK_TOLERANCE: f64 = 1e-9;
/// Paths per parallel work unit; reductions are merged in chunk order.
const CHUNK: usize = 256;
const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Times that must fall on the grid (maturities, hedge dates).
    #[serde(default)]
    pub nodes: Vec<f64>,
}

impl SimConfig {
    pub fn new(horizon: f64, steps: usize, paths: usize, seed: u64) -> Self {
        SimConfig { horizon, steps, paths, seed, antithetic: false, nodes: Vec::new() }
    }

    /// Uniform grid with step at most `dt`.
    pub fn with_step(horizon: f64, dt: f64, paths: usize, seed: u64) -> Self {
        let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon, steps, paths, seed)
    }

    pub fn with_nodes(mut self, nodes: &[f64]) -> Self {
        self.nodes.extend_from_slice(nodes);
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || self.steps == 0 || self.paths == 0 {
            return Err(Error::domain("simulation needs horizon > 0, steps >= 1, paths >= 1"));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        self.validate()?;
        TimeGrid::build(self.horizon, self.steps, &self.nodes)
    }
}

/// Simulation dates: the uniform grid `kT/N` merged with the requested nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn build(horizon: f64, steps: usize, nodes: &[f64]) -> Result<TimeGrid> {
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        times[steps] = horizon;
        for &t in nodes {
            if !(t > 0.0) || t > horizon + TIME_TOL {
                return Err(Error::domain(format!("grid node {t} outside (0, {horizon}]")));
            }
            if times.iter().all(|s| (s - t).abs() > TIME_TOL) {
                times.push(t);
            }
        }
        times.sort_by(f64::total_cmp);
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= TIME_TOL)
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or_else(|| Error::domain(format!("time {t} is not on the simulation grid")))
    }
}

/// Scratch holding one simulated path.
#[derive(Debug, Clone)]
pub struct PathView {
    pub index: usize,
    pub n: usize,
    /// `S_k`, `k = 0..=N`.
    pub s: Vec<f64>,
    /// `Z^i_k` at `k * n + i`.
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    /// `ΔW_{k+1}`, `k = 0..N`.
    pub dw: Vec<f64>,
    /// First step at which the asset hit the floor.
    pub absorbed_at: Option<usize>,
}

impl PathView {
    pub fn new(n: usize, steps: usize) -> Self {
        PathView {
            index: 0,
            n,
            s: vec![0.0; steps + 1],
            z: vec![0.0; (steps + 1) * n],
            v: vec![0.0; steps + 1],
            dw: vec![0.0; steps],
            absorbed_at: None,
        }
    }

    pub fn factors(&self, k: usize) -> &[f64] {
        &self.z[k * self.n..(k + 1) * self.n]
    }
}

/// The discretised dynamics for one parameter set on one grid.
#[derive(Debug, Clone)]
pub struct Scheme<'a> {
    pub params: &'a ModelParams,
    pub kernel: &'a KernelApprox,
    pub grid: TimeGrid,
    /// `1 / (1 + γ_i Δt_k)` at `k * n + i`.
    implicit: Vec<f64>,
}

impl<'a> Scheme<'a> {
    pub fn new(params: &'a ModelParams, kernel: &'a KernelApprox, grid: TimeGrid) -> Result<Self> {
        params.validate()?;
        let n = kernel.n;
        let mut implicit = Vec::with_capacity(grid.steps() * n);
        for k in 0..grid.steps() {
            let dt = grid.dt(k);
            implicit.extend(kernel.gamma.iter().map(|g| 1.0 / (1.0 + g * dt)));
        }
        Ok(Scheme { params, kernel, grid, implicit })
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Draws the Brownian increments of path `p`.
    pub fn fill_increments(&self, cfg: &SimConfig, p: usize, dw: &mut [f64]) {
        let (stream, sign) = if cfg.antithetic { (p / 2, if p % 2 == 1 { -1.0 } else { 1.0 }) } else { (p, 1.0) };
        let mut rng = rng::stream(cfg.seed, stream as u64);
        for (k, w) in dw.iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *w = sign * self.grid.dt(k).sqrt() * g;
        }
    }

    /// Runs the scheme on the increments already stored in `path.dw`.
    pub fn run(&self, z0: &[f64], s0: f64, path: &mut PathView) {
        let n = self.kernel.n;
        let p = self.params;
        path.absorbed_at = None;
        path.s[0] = s0;
        path.z[..n].copy_from_slice(z0);
        for k in 0..self.steps() {
            let dt = self.grid.dt(k);
            let (head, tail) = path.z.split_at_mut((k + 1) * n);
            let zk = &head[k * n..];
            let zagg = dot(&self.kernel.c, zk);
            let var = p.variance_of(zagg);
            path.v[k] = var;
            let sv = var.sqrt();
            let dw = path.dw[k];
            let s = path.s[k];
            let next = if path.absorbed_at.is_some() {
                ASSET_FLOOR
            } else {
                let candidate = s * (1.0 + sv * dw);
                if candidate <= ASSET_FLOOR {
                    path.absorbed_at = Some(k + 1);
                    ASSET_FLOOR
                } else {
                    candidate
                }
            };
            path.s[k + 1] = next;
            let shock = -p.lambda * zagg * dt + p.eta * sv * dw;
            let inv = &self.implicit[k * n..(k + 1) * n];
            for i in 0..n {
                tail[i] = (zk[i] + shock) * inv[i];
            }
        }
        let last = self.steps();
        path.v[last] = p.variance_of(dot(&self.kernel.c, path.factors(last)));
    }

    /// `∂(S_m - K)_+ / ∂(S_0, Z^1_0..Z^n_0)` on one path by the backward recursion
    /// `V(k) = D(k)ᵀ V(k+1)`, `V(m) = 1(S_m > K) e_0`.
    ///
    /// `D(k)` is never formed: its first row is `(1 + √V ΔW, S M¹ c)` and the factor
    /// block is `diag(1/(1+γΔt)) (I + M² 1 cᵀ)`, so one transposed product costs O(n).
    pub fn payoff_gradient(&self, path: &PathView, strike: f64, maturity: usize) -> Sensitivity {
        let n = self.kernel.n;
        if matches!(path.absorbed_at, Some(k) if k <= maturity) {
            return Sensitivity::Absorbed;
        }
        let s_m = path.s[maturity];
        if (s_m - strike).abs() < KINK_TOLERANCE * strike {
            return Sensitivity::Kink;
        }
        if s_m < strike {
            return Sensitivity::Value(vec![0.0; n + 1]);
        }
        let p = self.params;
        let c = &self.kernel.c;
        let mut adj = vec![0.0; n + 1];
        adj[0] = 1.0;
        for k in (0..maturity).rev() {
            let dt = self.grid.dt(k);
            let zk = path.factors(k);
            let x = dot(c, zk) - p.b;
            let var = path.v[k];
            let sv = var.sqrt();
            let dw = path.dw[k];
            let m1 = dw * p.a * p.phi_prime(x) / (2.0 * sv);
            let m2 = p.eta * m1 - p.lambda * dt;
            let inv = &self.implicit[k * n..(k + 1) * n];
            let v0 = adj[0];
            let mut r = 0.0;
            for i in 0..n {
                r += adj[i + 1] * inv[i];
            }
            adj[0] = (1.0 + sv * dw) * v0;
            let lead = path.s[k] * m1 * v0;
            for j in 0..n {
                adj[j + 1] = lead * c[j] + adj[j + 1] * inv[j] + c[j] * m2 * r;
            }
        }
        Sensitivity::Value(adj)
    }
}

/// Outcome of a pathwise derivative evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensitivity {
    Value(Vec<f64>),
    /// `S_m` within `KINK_TOLERANCE · K` of the strike.
    Kink,
    /// The asset hit the floor before maturity.
    Absorbed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub n: usize,
    pub paths: usize,
    pub times: Vec<f64>,
    /// `paths × (N+1)`.
    pub s: Vec<f64>,
    /// `paths × (N+1) × n`.
    pub z: Vec<f64>,
    /// `paths × (N+1)`.
    pub v: Vec<f64>,
    /// `paths × N`.
    pub brownian: Option<Vec<f64>>,
    pub absorbed: Vec<bool>,
}

impl PathBundle {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn s_at(&self, p: usize, k: usize) -> f64 {
        self.s[p * (self.steps() + 1) + k]
    }

    pub fn z_at(&self, p: usize, k: usize) -> &[f64] {
        let off = (p * (self.steps() + 1) + k) * self.n;
        &self.z[off..off + self.n]
    }

    pub fn absorbed_fraction(&self) -> f64 {
        self.absorbed.iter().filter(|&&a| a).count() as f64 / self.paths as f64
    }

    /// Rebuilds the scratch view of path `p`.
    pub fn view(&self, p: usize) -> PathView {
        let m = self.steps() + 1;
        let n = self.n;
        PathView {
            index: p,
            n,
            s: self.s[p * m..(p + 1) * m].to_vec(),
            z: self.z[p * m * n..(p + 1) * m * n].to_vec(),
            v: self.v[p * m..(p + 1) * m].to_vec(),
            dw: self
                .brownian
                .as_ref()
                .map(|b| b[p * (m - 1)..(p + 1) * (m - 1)].to_vec())
                .unwrap_or_default(),
            absorbed_at: if self.absorbed[p] {
                self.s[p * m..(p + 1) * m].iter().position(|&s| s == ASSET_FLOOR)
            } else {
                None
            },
        }
    }
}

fn check_inputs(kernel: &KernelApprox, z0: &[f64], s0: f64) -> Result<()> {
    check_len(kernel.n, z0.len())?;
    if !(s0 > 0.0) {
        return Err(Error::domain(format!("initial asset level must be positive, got {s0}")));
    }
    Ok(())
}

/// Simulates every path, folding each into a per-chunk accumulator; chunk results
/// are merged in index order so the result does not depend on the thread count.
pub fn reduce_paths<A, I, F, M>(
    params: &ModelParams,
    kernel: &KernelApprox,
    z0: &[f64],
    s0: f64,
    cfg: &SimConfig,
    init: I,
    visit: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &PathView) + Sync,
    M: Fn(A, A) -> A,
{
    check_inputs(kernel, z0, s0)?;
    let scheme = Scheme::new(params, kernel, cfg.time_grid()?)?;
    let chunks = cfg.paths.div_ceil(CHUNK);
    let partial: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = init();
            let mut path = PathView::new(kernel.n, scheme.steps());
            for p in chunk * CHUNK..((chunk + 1) * CHUNK).min(cfg.paths) {
                path.index = p;
                scheme.fill_increments(cfg, p, &mut path.dw);
                scheme.run(z0, s0, &mut path);
                visit(&mut acc, &path);
            }
            acc
        })
        .collect();
    let mut iter = partial.into_iter();
    let first = iter.next().unwrap_or_else(&init);
    Ok(iter.fold(first, merge))
}

/// Simulates and stores full paths.
pub fn simulate(params: &ModelParams, kernel: &KernelApprox, z0: &[f64], s0: f64, cfg: &SimConfig) -> Result<PathBundle> {
    check_inputs(kernel, z0, s0)?;
    let grid = cfg.time_grid()?;
    let times = grid.times().to_vec();
    let parts = reduce_paths(
        params,
        kernel,
        z0,
        s0,
        cfg,
        Vec::new,
        |acc: &mut Vec<PathView>, path| acc.push(path.clone()),
        |mut a, b| {
            a.extend(b);
            a
        },
    )?;
    let steps = times.len() - 1;
    let mut bundle = PathBundle {
        n: kernel.n,
        paths: cfg.paths,
        times,
        s: Vec::with_capacity(cfg.paths * (steps + 1)),
        z: Vec::with_capacity(cfg.paths * (steps + 1) * kernel.n),
        v: Vec::with_capacity(cfg.paths * (steps + 1)),
        brownian: Some(Vec::with_capacity(cfg.paths * steps)),
        absorbed: Vec::with_capacity(cfg.paths),
    };
    for path in parts {
        bundle.s.extend_from_slice(&path.s);
        bundle.z.extend_from_slice(&path.z);
        bundle.v.extend_from_slice(&path.v);
        if let Some(b) = bundle.brownian.as_mut() {
            b.extend_from_slice(&path.dw);
        }
        bundle.absorbed.push(path.absorbed_at.is_some());
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseSensitivity {
    pub maturity_index: usize,
    /// `paths × (n+1)`; rows of excluded paths are zero.
    pub dpayoff_dx0: Vec<f64>,
    pub excluded: Vec<bool>,
    pub kinks: usize,
    pub absorbed: usize,
}

impl PathwiseSensitivity {
    pub fn row(&self, p: usize) -> &[f64] {
        let w = self.dpayoff_dx0.len() / self.excluded.len();
        &self.dpayoff_dx0[p * w..(p + 1) * w]
    }
}

/// Pathwise derivatives of `(S_{N_m} - K)_+` with respect to `X_0` for each requested step index.
pub fn pathwise_derivatives(
    bundle: &PathBundle,
    params: &ModelParams,
    kernel: &KernelApprox,
    strike: f64,
    maturities: &[usize],
) -> Result<Vec<PathwiseSensitivity>> {
    if bundle.brownian.is_none() {
        return Err(Error::domain("path bundle did not retain its Brownian increments"));
    }
    if !(strike > 0.0) {
        return Err(Error::domain("strike must be positive"));
    }
    check_len(kernel.n, bundle.n)?;
    let grid = TimeGrid { times: bundle.times.clone() };
    let scheme = Scheme::new(params, kernel, grid)?;
    let n = kernel.n;
    let mut out = Vec::with_capacity(maturities.len());
    for &m in maturities {
        if m > bundle.steps() {
            return Err(Error::domain(format!("maturity index {m} beyond {} steps", bundle.steps())));
        }
        let rows: Vec<Sensitivity> = (0..bundle.paths)
            .into_par_iter()
            .map(|p| scheme.payoff_gradient(&bundle.view(p), strike, m))
            .collect();
        let mut sens = PathwiseSensitivity {
            maturity_index: m,
            dpayoff_dx0: Vec::with_capacity(bundle.paths * (n + 1)),
            excluded: Vec::with_capacity(bundle.paths),
            kinks: 0,
            absorbed: 0,
        };
        for r in rows {
            match r {
                Sensitivity::Value(v) => {
                    sens.dpayoff_dx0.extend(v);
                    sens.excluded.push(false);
                }
                other => {
                    if other == Sensitivity::Kink {
                        sens.kinks += 1;
                    } else {
                        sens.absorbed += 1;
                    }
                    sens.dpayoff_dx0.extend(std::iter::repeat_n(0.0, n + 1));
                    sens.excluded.push(true);
                }
            }
        }
        out.push(sens);
    }
    Ok(out)
}

const PATHS_MAGIC: &[u8; 8] = b"QRHPATH1";

/// Little-endian flat layout:
///
/// ```text
/// magic "QRHPATH1" | n: u32 | N: u32 | paths: u64
/// times: (N+1) f64
/// S: paths × (N+1) f64 | Z: paths × (N+1) × n f64 | V: paths × (N+1) f64
/// absorbed: paths × u8
/// ```
pub fn write_paths_bin<W: Write>(bundle: &PathBundle, mut w: W) -> Result<()> {
    w.write_all(PATHS_MAGIC)?;
    w.write_all(&(bundle.n as u32).to_le_bytes())?;
    w.write_all(&(bundle.steps() as u32).to_le_bytes())?;
    w.write_all(&(bundle.paths as u64).to_le_bytes())?;
    for block in [&bundle.times, &bundle.s, &bundle.z, &bundle.v] {
        for x in block.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    let flags: Vec<u8> = bundle.absorbed.iter().map(|&a| a as u8).collect();
    w.write_all(&flags)?;
    Ok(())
}

pub fn read_paths_bin<R: Read>(mut r: R) -> Result<PathBundle> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PATHS_MAGIC {
        return Err(Error::format("not a path file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let steps = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let paths = u64::from_le_bytes(b8) as usize;
    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            out.push(f64::from_le_bytes(b8));
        }
        Ok(out)
    };
    let times = read_block(steps + 1)?;
    let s = read_block(paths * (steps + 1))?;
    let z = read_block(paths * (steps + 1) * n)?;
    let v = read_block(paths * (steps + 1))?;
    let mut flags = vec![0u8; paths];
    r.read_exact(&mut flags)?;
    Ok(PathBundle { n, paths, times, s, z, v, brownian: None, absorbed: flags.into_iter().map(|f| f != 0).collect() })
}

/// Long-format CSV: `path,step,t,s,v,z1..zn`.
pub fn write_paths_csv<W: Write>(bundle: &PathBundle, mut w: W) -> Result<()> {
    write!(w, "path,step,t,s,v")?;
    for i in 1..=bundle.n {
        write!(w, ",z{i}")?;
    }
    writeln!(w)?;
    let m = bundle.steps() + 1;
    for p in 0..bundle.paths {
        for k in 0..m {
            write!(w, "{p},{k},{},{},{}", bundle.times[k], bundle.s_at(p, k), bundle.v[p * m + k])?;
            for z in bundle.z_at(p, k) {
                write!(w, ",{z}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel;
    use crate::model::hedging_reference;

    #[test]
    fn grid_merges_nodes() {
        let g = TimeGrid::build(0.09, 75, &[0.03, 0.05, 0.07, 0.09]).unwrap();
        assert_eq!(g.steps(), 77);
        assert!(g.index_of(0.05).is_some());
        assert_eq!(g.index_of(0.03), Some(25));
        assert!((0..g.steps()).all(|k| g.dt(k) > 0.0 && g.dt(k) <= 0.0012 + 1e-15));
        assert!(TimeGrid::build(0.09, 75, &[0.1]).is_err());
    }

    #[test]
    fn first_column_is_initial_state_and_seed_is_reproducible() {
        let k = build_kernel(0.51, 10, 3.92).unwrap();
        let spec = hedging_reference();
        let z0: Vec<f64> = (0..10).map(|i| 0.05 * i as f64 - 0.2).collect();
        let cfg = SimConfig::new(0.02, 10, 300, 42);
        let a = simulate(&spec.params, &k, &z0, 100.0, &cfg).unwrap();
        let b = simulate(&spec.params, &k, &z0, 100.0, &cfg).unwrap();
        assert_eq!(a, b);
        for p in 0..a.paths {
            assert_eq!(a.s_at(p, 0), 100.0);
            assert_eq!(a.z_at(p, 0), z0.as_slice());
        }
        assert!(a.v.iter().all(|&v| v >= spec.params.c));
        assert!(a.s.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn absorbed_paths_are_flagged() {
        let k = build_kernel(0.51, 2, 3.0).unwrap();
        let mut p = ModelParams::new(0.0, 0.0, 0.0, 0.0, 400.0);
        p.x_cap = 10.0;
        let cfg = SimConfig::new(0.5, 5, 200, 1);
        let bundle = simulate(&p, &k, &[0.0, 0.0], 1.0, &cfg).unwrap();
        assert!(bundle.absorbed_fraction() > 0.0);
        for q in 0..bundle.paths {
            if bundle.absorbed[q] {
                assert_eq!(bundle.s_at(q, bundle.steps()), ASSET_FLOOR);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = build_kernel(0.51, 3, 3.0).unwrap();
        let p = hedging_reference().params;
        let cfg = SimConfig::new(0.01, 2, 2, 0);
        assert!(simulate(&p, &k, &[0.0; 2], 1.0, &cfg).is_err());
        assert!(simulate(&p, &k, &[0.0; 3], 0.0, &cfg).is_err());
        assert!(simulate(&p, &k, &[0.0; 3], 1.0, &SimConfig::new(0.01, 0, 2, 0)).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let k = build_kernel(0.51, 3, 3.0).unwrap();
        let p = hedging_reference().params;
        let bundle = simulate(&p, &k, &[0.1, 0.0, -0.1], 50.0, &SimConfig::new(0.01, 4, 3, 9)).unwrap();
        let mut buf = Vec::new();
        write_paths_bin(&bundle, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 + 8 * (5 + 3 * 5 + 3 * 5 * 3 + 3 * 5) + 3);
        let back = read_paths_bin(buf.as_slice()).unwrap();
        assert_eq!(back.s, bundle.s);
        assert_eq!(back.z, bundle.z);
        assert_eq!(back.times, bundle.times);
        let mut csv = Vec::new();
        write_paths_csv(&bundle, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 3 * 5);
    }

    #[test]
    fn out_of_the_money_paths_have_zero_gradient() {
        let k = build_kernel(0.51, 4, 4.0).unwrap();
        let p = hedging_reference().params;
        let bundle = simulate(&p, &k, &[0.0; 4], 100.0, &SimConfig::new(0.02, 10, 64, 3)).unwrap();
        let sens = pathwise_derivatives(&bundle, &p, &k, 100.0, &[10]).unwrap();
        for q in 0..bundle.paths {
            if bundle.s_at(q, 10) < 100.0 {
                assert!(sens[0].row(q).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn gradient_needs_retained_increments() {
        let k = build_kernel(0.51, 2, 4.0).unwrap();
        let p = hedging_reference().params;
        let mut bundle = simulate(&p, &k, &[0.0; 2], 1.0, &SimConfig::new(0.01, 2, 2, 3)).unwrap();
        bundle.brownian = None;
        assert!(pathwise_derivatives(&bundle, &p, &k, 1.0, &[2]).is_err());
    }
}
