//! Exponential-sum approximation of the fractional kernel `K(t) = t^(α-1)/Γ(α)`.
//!
//! The kernel is the Laplace transform of `μ(dγ) = γ^(-α) / (Γ(α)Γ(1-α)) dγ`.
//! Splitting the support of `μ` at the geometric points `η_i = x^(i - n/2)`
//! and collapsing each cell to a point mass gives weights `c_i` (the cell mass)
//! and mean reversions `γ_i` (the cell's mean), so that
//! `K^n(t) = Σ c_i exp(-γ_i t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default roughness used throughout the toolkit.
pub const DEFAULT_ALPHA: f64 = 0.51;
/// Default number of factors.
pub const DEFAULT_FACTORS: usize = 10;
/// Mesh ratio used for `n = 10`, `α = 0.51`.
pub const DEFAULT_MESH: f64 = 3.92;
/// Horizon of the L² fit.
pub const DEFAULT_FIT_HORIZON: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelApprox {
    pub alpha: f64,
    pub n: usize,
    pub x_n: f64,
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub horizon: f64,
}

pub(crate) fn gamma_fn(x: f64) -> f64 {
    libm::tgamma(x)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0.5, 1), got {alpha}")));
    }
    Ok(())
}

/// Closed-form geometric partition of `μ`.
pub fn build_kernel(alpha: f64, n: usize, x_n: f64) -> Result<KernelApprox> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::domain("number of factors must be at least 1"));
    }
    if !(x_n > 1.0) || !x_n.is_finite() {
        return Err(Error::domain(format!("mesh ratio must exceed 1, got {x_n}")));
    }
    let half = n as f64 / 2.0;
    let norm = (1.0 - alpha) * gamma_fn(alpha) * gamma_fn(1.0 - alpha);
    let mass_factor = (1.0 - x_n.powf(alpha - 1.0)) / norm;
    let mean_factor = (1.0 - alpha) * (x_n.powf(2.0 - alpha) - 1.0)
        / ((2.0 - alpha) * (x_n.powf(1.0 - alpha) - 1.0));
    let mut c = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for i in 1..=n {
        let i = i as f64;
        c.push(x_n.powf((1.0 - alpha) * (i - half)) * mass_factor);
        gamma.push(x_n.powf(i - 1.0 - half) * mean_factor);
    }
    Ok(KernelApprox { alpha, n, x_n, c, gamma, horizon: DEFAULT_FIT_HORIZON })
}

impl KernelApprox {
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// `K^n(t) = Σ c_i e^{-γ_i t}`.
    pub fn value(&self, t: f64) -> f64 {
        self.c.iter().zip(&self.gamma).map(|(c, g)| c * (-g * t).exp()).sum()
    }

    /// The exact fractional kernel this approximates.
    pub fn target(&self, t: f64) -> f64 {
        fractional_kernel(self.alpha, t)
    }

    /// Partition points `η_0 < η_1 < … < η_n`.
    pub fn partition(&self) -> Vec<f64> {
        let half = self.n as f64 / 2.0;
        (0..=self.n).map(|i| self.x_n.powf(i as f64 - half)).collect()
    }
}

pub fn kernel_value(k: &KernelApprox, t: f64) -> f64 {
    k.value(t)
}

pub fn fractional_kernel(alpha: f64, t: f64) -> f64 {
    t.powf(alpha - 1.0) / gamma_fn(alpha)
}

/// Quadrature used for `‖K^n - K‖_{L²(0,T)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum L2Quadrature {
    /// Trapezoid in `ln t` on the geometric grid `t_j = T·ratio^{-(points-1-j)}`,
    /// with the cell `[0, t_0]` integrated in closed form.
    Graded { points: usize, ratio: f64 },
    /// Right-endpoint rule on the uniform grid `t_j = jT/points`, `j = 1..points`.
    /// This is the discrete norm on a coarse time grid that never touches `t = 0`.
    Uniform { points: usize },
}

impl Default for L2Quadrature {
    fn default() -> Self {
        L2Quadrature::Graded { points: 2000, ratio: 1.05 }
    }
}

impl L2Quadrature {
    /// Same rule with `factor` times as many nodes covering the same span.
    pub fn refined(self, factor: usize) -> Self {
        match self {
            L2Quadrature::Graded { points, ratio } => L2Quadrature::Graded {
                points: (points - 1) * factor + 1,
                ratio: ratio.powf(1.0 / factor as f64),
            },
            L2Quadrature::Uniform { points } => L2Quadrature::Uniform { points: points * factor },
        }
    }
}

/// `∫_0^{t0} s^{α-1} e^{-γ s} ds` via the positive series of the lower incomplete gamma function.
fn lower_incomplete_scaled(alpha: f64, gamma: f64, t0: f64) -> f64 {
    let x = gamma * t0;
    let mut term = 1.0 / alpha;
    let mut sum = term;
    let mut k = 1.0;
    while k < 500.0 {
        term *= x / (alpha + k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    t0.powf(alpha) * (-x).exp() * sum
}

/// `(∫_0^T (K^n(t) - K(t))² dt)^{1/2}`.
pub fn l2_error(k: &KernelApprox, horizon: f64, quad: L2Quadrature) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    let alpha = k.alpha;
    let sq = |t: f64| {
        let d = k.value(t) - fractional_kernel(alpha, t);
        d * d
    };
    let total = match quad {
        L2Quadrature::Uniform { points } => {
            if points == 0 {
                return Err(Error::domain("quadrature needs at least one point"));
            }
            let h = horizon / points as f64;
            (1..=points).map(|j| sq(j as f64 * h)).sum::<f64>() * h
        }
        L2Quadrature::Graded { points, ratio } => {
            if points < 2 || !(ratio > 1.0) {
                return Err(Error::domain("graded quadrature needs >= 2 points and ratio > 1"));
            }
            let h = ratio.ln();
            let t0 = horizon * (-(h * (points - 1) as f64)).exp();
            // Closed form on [0, t0], where K is singular.
            let g_a = gamma_fn(alpha);
            let kk = t0.powf(2.0 * alpha - 1.0) / ((2.0 * alpha - 1.0) * g_a * g_a);
            let kkn: f64 = k
                .c
                .iter()
                .zip(&k.gamma)
                .map(|(c, g)| c * lower_incomplete_scaled(alpha, *g, t0))
                .sum::<f64>()
                / g_a;
            let mut knkn = 0.0;
            for (ci, gi) in k.c.iter().zip(&k.gamma) {
                for (cj, gj) in k.c.iter().zip(&k.gamma) {
                    let s = gi + gj;
                    knkn += ci * cj * (-(-s * t0).exp_m1()) / s;
                }
            }
            let head = (kk - 2.0 * kkn + knkn).max(0.0);
            let mut body = 0.0;
            for j in 0..points {
                let t = horizon * (-(h * (points - 1 - j) as f64)).exp();
                let w = if j == 0 || j == points - 1 { 0.5 } else { 1.0 };
                body += w * sq(t) * t;
            }
            head + body * h
        }
    };
    Ok(total.max(0.0).sqrt())
}

/// Settings for the 1-D search over the mesh ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSearch {
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    /// The bracket's upper end is doubled (up to this value) while the minimum sits on it.
    pub max_upper: f64,
    pub objective: L2Quadrature,
}

impl Default for MeshSearch {
    fn default() -> Self {
        MeshSearch {
            lower: 1.05,
            upper: 50.0,
            tolerance: 1e-3,
            max_upper: 1600.0,
            objective: L2Quadrature::Uniform { points: 40 },
        }
    }
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Mesh ratio minimising the L² distance between `K^n` and `K` on `(0, T)`.
pub fn optimal_mesh(alpha: f64, n: usize, horizon: f64) -> Result<f64> {
    optimal_mesh_with(alpha, n, horizon, &MeshSearch::default())
}

pub fn optimal_mesh_with(alpha: f64, n: usize, horizon: f64, search: &MeshSearch) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 || !(horizon > 0.0) {
        return Err(Error::domain("need n >= 1 and a positive horizon"));
    }
    let objective = |x: f64| {
        build_kernel(alpha, n, x)
            .and_then(|k| l2_error(&k, horizon, search.objective))
            .unwrap_or(f64::INFINITY)
    };
    let mut upper = search.upper;
    loop {
        let x = golden_section(&objective, search.lower, upper, search.tolerance);
        if x - search.lower <= 2.0 * search.tolerance {
            return Err(Error::Convergence(format!(
                "mesh minimum not bracketed: optimum {x} sits on the lower bound"
            )));
        }
        if upper - x > 2.0 * search.tolerance {
            return Ok(x);
        }
        if upper * 2.0 > search.max_upper {
            return Err(Error::Convergence(format!(
                "mesh minimum not bracketed below {}",
                search.max_upper
            )));
        }
        upper *= 2.0;
    }
}

/// Optimal mesh followed by the closed-form coefficients.
pub fn fit_kernel(alpha: f64, n: usize, horizon: f64) -> Result<KernelApprox> {
    let x = optimal_mesh(alpha, n, horizon)?;
    Ok(build_kernel(alpha, n, x)?.with_horizon(horizon))
}
