//! Box-constrained limited-memory BFGS.
//!
//! Variables sitting on a bound with the gradient pointing outward are frozen for the
//! iteration; the two-loop recursion runs on the free ones and the step is projected
//! back onto the box inside an Armijo backtracking search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected gradient's infinity norm falls below this.
    pub gtol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub ftol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { memory: 10, max_iter: 500, gtol: 1e-7, ftol: 1e-10, armijo: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: String,
    /// Objective at every accepted iterate, starting point included.
    pub trace: Vec<f64>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Infinity norm of `P(x - g) - x`.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((x, g), (l, h))| ((x - g).clamp(*l, *h) - x).abs())
        .fold(0.0, f64::max)
}

/// Minimises `f` over `lo ≤ x ≤ hi`. `f(x, grad)` returns the objective and writes the gradient.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    check_len(n, lo.len())?;
    check_len(n, hi.len())?;
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::domain("lower bounds must not exceed upper bounds"));
    }
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut trace = vec![fx];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut reason = "iteration limit".to_string();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) < cfg.gtol {
            converged = true;
            reason = "projected gradient".into();
            break;
        }
        let free: Vec<bool> = (0..n).map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0))).collect();

        // two-loop recursion on the free subspace
        let mut d: Vec<f64> = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot_free(s, &d, &free);
            axpy_free(-a, y, &mut d, &free);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let yy = dot_free(y, y, &free);
            if yy > 0.0 {
                let scale = dot_free(s, y, &free) / yy;
                if scale > 0.0 {
                    d.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot_free(y, &d, &free);
            axpy_free(a - b, s, &mut d, &free);
        }
        // a quasi-Newton step may point out of the box on a free coordinate sitting at a bound
        for i in 0..n {
            if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            memory.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }

        let mut accepted = false;
        let mut fnew = fx;
        // a failed search along the quasi-Newton direction is retried once along the gradient
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
                d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            }
            let mut t = if memory.is_empty() {
                let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if dmax > 0.0 { (1.0 / dmax).min(1.0) } else { 1.0 }
            } else {
                1.0
            };
            for _ in 0..cfg.max_backtracks {
                for i in 0..n {
                    xn[i] = x[i] + t * d[i];
                }
                project(&mut xn, lo, hi);
                fnew = f(&xn, &mut gn);
                evaluations += 1;
                let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
                if fnew.is_finite() && gn.iter().all(|v| v.is_finite()) && fnew <= fx + cfg.armijo * decrease.min(0.0) && fnew <= fx {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            reason = "line search failed".into();
            converged = projected_gradient_norm(&x, &g, lo, hi) < cfg.gtol.sqrt();
            break;
        }
        iterations += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() && sy > 0.0 {
            if memory.len() == cfg.memory.max(1) {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let fold = fx;
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        fx = fnew;
        trace.push(fx);
        if fold - fx <= cfg.ftol * fold.abs().max(fx.abs()).max(f64::MIN_POSITIVE) {
            converged = true;
            reason = "relative decrease".into();
            break;
        }
    }
    Ok(Minimum { x, f: fx, grad: g, iterations, evaluations, converged, reason, trace })
}

fn dot_free(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter().zip(b).zip(free).filter(|(_, f)| **f).map(|((a, b), _)| a * b).sum()
}

fn axpy_free(alpha: f64, x: &[f64], y: &mut [f64], free: &[bool]) {
    for ((y, x), f) in y.iter_mut().zip(x).zip(free) {
        if *f {
            *y += alpha * x;
        }
    }
}

/// Points of the Halton sequence in `[0, 1)^dim` (bases: the first `dim` primes).
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];
    assert!(dim <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
    PRIMES[..dim]
        .iter()
        .map(|&base| {
            let (mut i, mut f, mut r) = (index, 1.0, 0.0);
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}
