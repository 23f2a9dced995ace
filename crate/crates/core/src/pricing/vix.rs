//! VIX from the Markov state.
//!
//! `VIX_t² = (100² / Δ) ∫_0^Δ E[V_{t+s} | X_t] ds`. The factor drift is linear and
//! `η² V` is quadratic in the factors, so the vector
//! `y = (1, E[Z^i], E[Z^i Z^j] for i ≤ j)` solves a constant-coefficient linear system
//! `y' = A y` and `E[V] = ℓ·y`. The integral is then the quadratic form
//! `q·y(0)` with `q = ∫_0^Δ exp(Aᵀ s) ℓ ds`, taken from one augmented exponential.
//! The variance cap is not represented in the moments.

use serde::{Deserialize, Serialize};

use super::surface::{Moments, PriceEstimate};
use crate::error::{check_len, Error, Result};
use crate::kernel::KernelApprox;
use crate::linalg::{expm, Matrix};
use crate::mc::{reduce_paths, SimConfig};
use crate::model::{FactorState, ModelParams};

/// Thirty calendar days in years.
pub const VIX_WINDOW: f64 = 30.0 / 365.0;

/// Position of `E[Z^i Z^j]`, `i ≤ j`, in the moment vector.
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    1 + n + i * n - (i * i - i) / 2 + (j - i)
}

/// Moment generator `A` and the read-out `ℓ` with `E[V] = ℓ·y`.
fn moment_system(params: &ModelParams, kernel: &KernelApprox) -> (Matrix, Vec<f64>) {
    let n = kernel.n;
    let dim = 1 + n + n * (n + 1) / 2;
    let c = &kernel.c;
    let g = &kernel.gamma;
    let (lambda, eta, a, b) = (params.lambda, params.eta, params.a, params.b);

    let mut ell = vec![0.0; dim];
    ell[0] = a * b * b + params.c;
    for k in 0..n {
        ell[1 + k] = -2.0 * a * b * c[k];
        for l in k..n {
            ell[pair_index(n, k, l)] = if k == l { a * c[k] * c[k] } else { 2.0 * a * c[k] * c[l] };
        }
    }

    let mut gen = Matrix::zeros(dim);
    for i in 0..n {
        gen[(1 + i, 1 + i)] -= g[i];
        for j in 0..n {
            gen[(1 + i, 1 + j)] -= lambda * c[j];
        }
    }
    for i in 0..n {
        for j in i..n {
            let row = pair_index(n, i, j);
            gen[(row, row)] -= g[i] + g[j];
            for l in 0..n {
                gen[(row, pair_index(n, j, l))] -= lambda * c[l];
                gen[(row, pair_index(n, i, l))] -= lambda * c[l];
            }
            for (col, e) in ell.iter().enumerate() {
                gen[(row, col)] += eta * eta * e;
            }
        }
    }
    (gen, ell)
}

/// Precomputed `state ↦ VIX²` map for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VixFunctional {
    pub n: usize,
    pub window: f64,
    /// Coefficients of `(1, z_i, z_i z_j for i ≤ j)`, already scaled by `100² / Δ`.
    pub weights: Vec<f64>,
}

impl VixFunctional {
    pub fn new(params: &ModelParams, kernel: &KernelApprox, window: f64) -> Result<Self> {
        params.validate()?;
        if !(window > 0.0) {
            return Err(Error::domain("VIX window must be positive"));
        }
        let n = kernel.n;
        let (gen, ell) = moment_system(params, kernel);
        let dim = gen.dim();
        let mut aug = Matrix::zeros(dim + 1);
        for i in 0..dim {
            for j in 0..dim {
                aug[(i, j)] = gen[(j, i)] * window;
            }
            aug[(i, dim)] = ell[i] * window;
        }
        let e = expm(&aug)?;
        let scale = 1e4 / window;
        let weights: Vec<f64> = (0..dim).map(|i| e[(i, dim)] * scale).collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("VIX moment integral is not finite".into()));
        }
        Ok(VixFunctional { n, window, weights })
    }

    pub fn vix_squared(&self, z: &[f64]) -> f64 {
        let n = self.n;
        let w = &self.weights;
        let mut acc = w[0];
        for i in 0..n {
            acc += w[1 + i] * z[i];
        }
        let mut idx = 1 + n;
        for i in 0..n {
            for j in i..n {
                acc += w[idx] * z[i] * z[j];
                idx += 1;
            }
        }
        acc
    }

    pub fn vix(&self, z: &[f64]) -> f64 {
        self.vix_squared(z).max(0.0).sqrt()
    }
}

/// `VIX²` at the given state (in squared index points).
pub fn vix_squared_from_state(
    params: &ModelParams,
    kernel: &KernelApprox,
    state: &FactorState,
    window: f64,
) -> Result<f64> {
    check_len(kernel.n, state.z.len())?;
    let v = VixFunctional::new(params, kernel, window)?.vix_squared(&state.z);
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Numerical(format!("VIX² evaluated to {v}")));
    }
    Ok(v)
}

/// Brute-force `VIX²` by inner simulation of `-2 (100²/Δ) log(S_Δ / S_0)` from `z`.
///
/// The log-return is accumulated in log-Euler form, `Σ (√V ΔW - V Δt / 2)`, on the
/// simulated variance path. The multiplicative asset step can hit the absorbing
/// floor on high-variance paths, which would add a spurious `log(floor)` term.
pub fn nested_vix_squared(
    params: &ModelParams,
    kernel: &KernelApprox,
    z: &[f64],
    window: f64,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<PriceEstimate> {
    let cfg = SimConfig::new(window, steps, paths, seed);
    let scale = -2e4 / window;
    let dt = cfg.dt();
    let m = reduce_paths(
        params,
        kernel,
        z,
        1.0,
        &cfg,
        || Moments::new(1),
        |acc, path| {
            let log_return: f64 = (0..steps).map(|k| path.v[k].sqrt() * path.dw[k] - 0.5 * path.v[k] * dt).sum();
            acc.push(&[scale * log_return])
        },
        Moments::merge,
    )?;
    Ok(m.estimate())
}
