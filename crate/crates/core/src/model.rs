//! Parameters, Markov state and variance map of the lifted quadratic rough Heston model.
//!
//! `V = a φ(Z - b) + c` with `Z = Σ c_i Z^i`, where the factors follow
//! `dZ^i = (-γ_i Z^i - λ Z) dt + η √V dW` and `dS = S √V dW`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::{KernelApprox, DEFAULT_ALPHA};
use crate::linalg::{expm, Matrix};

/// Truncation level `x*` of the square in the variance map.
pub const DEFAULT_VARIANCE_CAP: f64 = 10.0;

fn default_cap() -> f64 {
    DEFAULT_VARIANCE_CAP
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean-reversion speed λ.
    pub lambda: f64,
    /// Vol-of-vol η.
    pub eta: f64,
    /// Feedback strength.
    pub a: f64,
    /// Feedback asymmetry.
    pub b: f64,
    /// Base variance level.
    pub c: f64,
    /// Roughness; fixed, never calibrated.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `x*` in `φ(x) = min-branch(x², x*²)`.
    #[serde(default = "default_cap")]
    pub x_cap: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, eta: f64, a: f64, b: f64, c: f64) -> Self {
        ModelParams { lambda, eta, a, b, c, alpha: DEFAULT_ALPHA, x_cap: DEFAULT_VARIANCE_CAP }
    }

    /// `ω = (λ, η, a, b, c)`.
    pub fn omega(&self) -> [f64; 5] {
        [self.lambda, self.eta, self.a, self.b, self.c]
    }

    pub fn from_omega(omega: &[f64], alpha: f64) -> Result<Self> {
        check_len(5, omega.len())?;
        let p = ModelParams { alpha, ..ModelParams::new(omega[0], omega[1], omega[2], omega[3], omega[4]) };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.eta >= 0.0
            && self.a >= 0.0
            && self.b >= 0.0
            && self.c > 0.0
            && self.x_cap > 0.0
            && self.alpha > 0.5
            && self.alpha < 1.0;
        if !ok || !self.omega().iter().all(|v| v.is_finite()) {
            return Err(Error::domain(format!("invalid model parameters {self:?}")));
        }
        Ok(())
    }

    /// `φ(x) = x²` for `x < x*`, `x*²` otherwise.
    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        if x < self.x_cap {
            x * x
        } else {
            self.x_cap * self.x_cap
        }
    }

    /// `dφ/dx` on the branch in force at `x`.
    #[inline]
    pub fn phi_prime(&self, x: f64) -> f64 {
        if x < self.x_cap {
            2.0 * x
        } else {
            0.0
        }
    }

    /// Spot variance as a function of the aggregate factor.
    #[inline]
    pub fn variance_of(&self, z: f64) -> f64 {
        self.a * self.phi(z - self.b) + self.c
    }
}

/// Markov state `(S, Z^1..Z^n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub z: Vec<f64>,
    pub s: f64,
}

impl FactorState {
    pub fn new(s: f64, z: Vec<f64>) -> Self {
        FactorState { z, s }
    }
}

/// Parameters and initial factors in their flat JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: ModelParams,
    pub z0: Vec<f64>,
}

pub fn aggregate_z(kernel: &KernelApprox, state: &FactorState) -> Result<f64> {
    check_len(kernel.n, state.z.len())?;
    Ok(dot(&kernel.c, &state.z))
}

pub fn variance(params: &ModelParams, kernel: &KernelApprox, state: &FactorState) -> Result<f64> {
    Ok(params.variance_of(aggregate_z(kernel, state)?))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generator of the factor-mean ODE `m' = -γ ⊙ m - λ (cᵀm) 1`.
pub(crate) fn mean_generator(lambda: f64, kernel: &KernelApprox) -> Matrix {
    let n = kernel.n;
    let mut a = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = -lambda * kernel.c[j];
        }
        a[(i, i)] -= kernel.gamma[i];
    }
    a
}

/// The deterministic term structure encoded by `z0`.
#[derive(Debug, Clone)]
pub struct MeanCurve {
    kernel: KernelApprox,
    lambda: f64,
    z0: Vec<f64>,
    generator: Matrix,
}

impl MeanCurve {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `g^n(t) = Σ z0_i c_i e^{-γ_i t}`.
    pub fn g(&self, t: f64) -> f64 {
        self.z0
            .iter()
            .zip(&self.kernel.c)
            .zip(&self.kernel.gamma)
            .map(|((z, c), g)| z * c * (-g * t).exp())
            .sum()
    }

    /// Factor means `E[Z^i_t]`.
    pub fn factor_means(&self, t: f64) -> Result<Vec<f64>> {
        if t < 0.0 {
            return Err(Error::domain("mean curve needs t >= 0"));
        }
        Ok(expm(&self.generator.scale(t))?.matvec(&self.z0))
    }

    /// `E[Z_t]`, solving `E[Z_t] + λ Σ c_i ∫_0^t e^{-γ_i(t-s)} E[Z_s] ds = g^n(t)`.
    pub fn expected_z(&self, t: f64) -> Result<f64> {
        Ok(dot(&self.kernel.c, &self.factor_means(t)?))
    }
}

pub fn initial_mean_curve(params: &ModelParams, kernel: &KernelApprox, z0: &[f64]) -> Result<MeanCurve> {
    check_len(kernel.n, z0.len())?;
    Ok(MeanCurve {
        kernel: kernel.clone(),
        lambda: params.lambda,
        z0: z0.to_vec(),
        generator: mean_generator(params.lambda, kernel),
    })
}

/// Calibrated values reported for 19 May 2017 (α = 0.51, n = 10, x = 3.92).
pub fn may_2017_calibration() -> ModelSpec {
    ModelSpec {
        params: ModelParams::new(2.5, 1.485, 0.401, 0.235, 0.001),
        z0: vec![-0.033, 0.015, -0.004, 0.017, 0.028, 0.098, 0.192, -0.076, 0.072, -0.062],
    }
}

/// The parameter set used for the synthetic hedging experiments.
pub fn hedging_reference() -> ModelSpec {
    ModelSpec { params: ModelParams::new(1.0, 1.2, 0.35, 0.2, 0.0025), z0: vec![0.0; 10] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel;
    use proptest::prelude::*;

    fn kernel10() -> KernelApprox {
        build_kernel(0.51, 10, 3.92).unwrap()
    }

    #[test]
    fn variance_examples() {
        let k = kernel10();
        let zero = FactorState::new(100.0, vec![0.0; 10]);
        let mut p = hedging_reference().params;
        assert!((variance(&p, &k, &zero).unwrap() - 0.0165).abs() < 1e-15);
        p.a = 0.0;
        let far = FactorState::new(100.0, vec![3.0; 10]);
        assert_eq!(variance(&p, &k, &far).unwrap(), p.c);
        // cap engages at Z - b = 2x*
        let p = hedging_reference().params;
        let sum_c: f64 = k.c.iter().sum();
        let zval = (2.0 * p.x_cap + p.b) / sum_c;
        let capped = FactorState::new(1.0, vec![zval; 10]);
        let v = variance(&p, &k, &capped).unwrap();
        assert!((v - (p.a * p.x_cap * p.x_cap + p.c)).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_wrong_length() {
        let k = kernel10();
        let bad = FactorState::new(1.0, vec![0.0; 9]);
        assert!(matches!(aggregate_z(&k, &bad), Err(Error::Dimension { expected: 10, got: 9 })));
    }

    #[test]
    fn aggregate_unit_vectors_pick_weights() {
        let k = kernel10();
        for j in 0..10 {
            let mut z = vec![0.0; 10];
            z[j] = 1.0;
            assert_eq!(aggregate_z(&k, &FactorState::new(1.0, z)).unwrap(), k.c[j]);
        }
    }

    #[test]
    fn may_2017_aggregate_matches_direct_dot_product() {
        let k = kernel10();
        let spec = may_2017_calibration();
        let mut direct = 0.0;
        for i in 0..10 {
            direct += k.c[i] * spec.z0[i];
        }
        let z = aggregate_z(&k, &FactorState::new(1.0, spec.z0.clone())).unwrap();
        assert!((z - direct).abs() < 1e-14);
    }

    #[test]
    fn zero_initial_factors_give_zero_curve() {
        let k = kernel10();
        let curve = initial_mean_curve(&hedging_reference().params, &k, &[0.0; 10]).unwrap();
        for t in [0.0, 0.01, 0.1] {
            assert_eq!(curve.g(t), 0.0);
            assert_eq!(curve.expected_z(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn no_mean_reversion_means_curve_is_g() {
        let k = kernel10();
        let p = ModelParams { lambda: 0.0, ..hedging_reference().params };
        let z0 = may_2017_calibration().z0;
        let curve = initial_mean_curve(&p, &k, &z0).unwrap();
        for t in [0.0, 0.003, 0.02, 0.1] {
            assert!((curve.expected_z(t).unwrap() - curve.g(t)).abs() < 1e-12);
        }
    }

    /// Adaptive Simpson, used as an independent convolution oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, d: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
            let l = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let r = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if d == 0 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, l, tol / 2.0, d - 1) + rec(f, m, b, fm, frm, fb, r, tol / 2.0, d - 1)
        }
        rec(f, a, b, fa, fm, fb, whole, tol, depth)
    }

    #[test]
    fn mean_curve_satisfies_volterra_identity() {
        let k = kernel10();
        let p = ModelParams::new(1.7, 1.2, 0.3, 0.1, 0.01);
        let z0 = may_2017_calibration().z0;
        let curve = initial_mean_curve(&p, &k, &z0).unwrap();
        for t in [0.01, 0.05, 0.1] {
            let mut conv = 0.0;
            for (c, g) in k.c.iter().zip(&k.gamma) {
                let integrand = |s: f64| (-g * (t - s)).exp() * curve.expected_z(s).unwrap();
                conv += c * simpson(&integrand, 0.0, t, 1e-13, 40);
            }
            let lhs = curve.expected_z(t).unwrap() + p.lambda * conv;
            assert!((lhs - curve.g(t)).abs() < 1e-8, "t={t}: {lhs} vs {}", curve.g(t));
        }
    }

    #[test]
    fn params_json_is_flat() {
        let spec = may_2017_calibration();
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        for key in ["lambda", "eta", "a", "b", "c", "alpha", "z0"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: ModelSpec = serde_json::from_str(r#"{"lambda":1,"eta":1.2,"a":0.35,"b":0.2,"c":0.0025,"z0":[0,0]}"#).unwrap();
        assert_eq!(back.params.alpha, DEFAULT_ALPHA);
        assert_eq!(back.params.x_cap, DEFAULT_VARIANCE_CAP);
    }

    proptest! {
        #[test]
        fn variance_bounded_below_and_even_before_cap(z in -3.0f64..3.0, a in 0.0f64..1.0, b in 0.0f64..0.5, c in 1e-4f64..0.05) {
            let p = ModelParams::new(1.0, 1.0, a, b, c);
            let v = p.variance_of(z);
            prop_assert!(v >= c);
            let mirrored = p.variance_of(2.0 * b - z);
            prop_assert!((v - mirrored).abs() <= 1e-12 * v.max(1.0));
        }

        #[test]
        fn aggregate_is_linear(u in proptest::collection::vec(-1.0f64..1.0, 10), v in proptest::collection::vec(-1.0f64..1.0, 10), s in -2.0f64..2.0, t in -2.0f64..2.0) {
            let k = kernel10();
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| s * x + t * y).collect();
            let lhs = aggregate_z(&k, &FactorState::new(1.0, w)).unwrap();
            let rhs = s * aggregate_z(&k, &FactorState::new(1.0, u.clone())).unwrap()
                + t * aggregate_z(&k, &FactorState::new(1.0, v.clone())).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
