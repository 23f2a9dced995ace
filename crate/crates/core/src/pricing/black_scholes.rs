//! Undiscounted Black-Scholes call analytics with zero rates and dividends.

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn d1(s: f64, k: f64, sd: f64) -> f64 {
    (s / k).ln() / sd + 0.5 * sd
}

/// Call value `s N(d1) - k N(d2)`.
pub fn bs_price(s: f64, k: f64, tau: f64, sigma: f64) -> f64 {
    let sd = sigma * tau.max(0.0).sqrt();
    if !(sd > 1e-300) {
        return (s - k).max(0.0);
    }
    let d1 = d1(s, k, sd);
    let d2 = d1 - sd;
    // s N(d1) - k N(d2) loses precision deep out of the money; the erfc form keeps it
    (0.5 * s * libm::erfc(-d1 / SQRT_2) - 0.5 * k * libm::erfc(-d2 / SQRT_2)).max((s - k).max(0.0))
}

/// `(∂P/∂s, ∂P/∂σ)`.
pub fn bs_delta_vega(s: f64, k: f64, tau: f64, sigma: f64) -> (f64, f64) {
    let sq = tau.max(0.0).sqrt();
    let sd = sigma * sq;
    if !(sd > 1e-300) {
        let delta = if s > k { 1.0 } else { 0.0 };
        return (delta, 0.0);
    }
    let d1 = d1(s, k, sd);
    (norm_cdf(d1), s * norm_pdf(d1) * sq)
}

pub fn bs_delta(s: f64, k: f64, tau: f64, sigma: f64) -> f64 {
    bs_delta_vega(s, k, tau, sigma).0
}

pub fn bs_vega(s: f64, k: f64, tau: f64, sigma: f64) -> f64 {
    bs_delta_vega(s, k, tau, sigma).1
}

const PRICE_TOL: f64 = 1e-13;
const MAX_VOL: f64 = 1e4;

/// Black-Scholes volatility reproducing `price`, by Newton steps kept inside a
/// shrinking bracket (bisection whenever a step leaves it).
pub fn implied_vol(price: f64, s: f64, k: f64, tau: f64) -> Result<f64> {
    if !(s > 0.0 && k > 0.0 && tau > 0.0) || !price.is_finite() {
        return Err(Error::domain("implied vol needs s, k, tau > 0 and a finite price"));
    }
    let intrinsic = (s - k).max(0.0);
    if !(price > intrinsic && price < s) {
        return Err(Error::NoSolution(format!("price {price} outside ({intrinsic}, {s})")));
    }
    let tol = PRICE_TOL * s.max(1.0);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while bs_price(s, k, tau, hi) < price {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_VOL {
            return Err(Error::NoSolution(format!("price {price} needs a volatility above {MAX_VOL}")));
        }
    }
    // start from the at-the-money approximation, clipped into the bracket
    let guess = (price - intrinsic) / (0.4 * s * tau.sqrt());
    let mut sigma = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    let mut diff = f64::INFINITY;
    for _ in 0..200 {
        diff = bs_price(s, k, tau, sigma) - price;
        if diff == 0.0 {
            return Ok(sigma);
        }
        if diff > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let vega = bs_vega(s, k, tau, sigma);
        let step = diff / vega;
        if vega > 0.0 && sigma - step > lo && sigma - step < hi {
            sigma -= step;
            if step.abs() <= 1e-14 * sigma {
                return Ok(sigma);
            }
        } else {
            sigma = 0.5 * (lo + hi);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(sigma);
        }
    }
    if diff.abs() <= tol {
        return Ok(sigma);
    }
    Err(Error::Convergence(format!("implied vol did not converge for price {price}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent normal CDF: composite Simpson on the density over [0, x].
    fn cdf_oracle(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut acc = norm_pdf(0.0) + norm_pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * norm_pdf(i as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn reference_price_matches_oracle_cdf() {
        let (s, k, tau, sigma): (f64, f64, f64, f64) = (100.0, 98.0, 0.08, 0.13);
        let sd = sigma * f64::sqrt(tau);
        let d1 = (s / k).ln() / sd + 0.5 * sd;
        let want = s * cdf_oracle(d1) - k * cdf_oracle(d1 - sd);
        assert!((bs_price(s, k, tau, sigma) - want).abs() < 1e-10);
    }

    #[test]
    fn limits() {
        assert_eq!(bs_price(105.0, 100.0, 0.5, 0.0), 5.0);
        assert!((bs_price(100.0, 100.0, 0.5, 1e-9) - 0.0).abs() < 1e-6);
        let atm = bs_price(100.0, 100.0, 0.01, 0.1);
        assert!((atm - 0.398_942 * 100.0 * 0.1 * 0.1).abs() < 1e-3);
        let (d, v) = bs_delta_vega(1000.0, 10.0, 0.1, 0.2);
        assert!((d - 1.0).abs() < 1e-12 && v < 1e-12);
        let (d, _) = bs_delta_vega(100.0, 100.0, 0.01, 0.2);
        assert!((d - 0.5).abs() < 0.02);
    }

    #[test]
    fn greeks_match_finite_differences() {
        for &(s, k, tau, sigma) in &[(100.0, 98.0, 0.08, 0.13), (1.0, 1.1, 0.03, 0.4), (20.0, 15.0, 0.5, 0.9)] {
            let (d, v) = bs_delta_vega(s, k, tau, sigma);
            let hs = 1e-4 * s;
            let fd_d = (bs_price(s + hs, k, tau, sigma) - bs_price(s - hs, k, tau, sigma)) / (2.0 * hs);
            let hv = 1e-5;
            let fd_v = (bs_price(s, k, tau, sigma + hv) - bs_price(s, k, tau, sigma - hv)) / (2.0 * hv);
            assert!(((d - fd_d) / d).abs() < 1e-6, "delta {d} vs {fd_d}");
            assert!(((v - fd_v) / v).abs() < 1e-6, "vega {v} vs {fd_v}");
        }
    }

    #[test]
    fn boundary_prices_have_no_solution() {
        assert!(matches!(implied_vol(2.0, 100.0, 98.0, 0.1), Err(Error::NoSolution(_))));
        assert!(matches!(implied_vol(100.0, 100.0, 98.0, 0.1), Err(Error::NoSolution(_))));
        assert!(matches!(implied_vol(0.0, 1.0, 1.2, 0.1), Err(Error::NoSolution(_))));
        assert!(implied_vol(1.0, -1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn round_trip_reference() {
        let p = bs_price(1.0, 1.05, 0.05, 0.2);
        assert!((implied_vol(p, 1.0, 1.05, 0.05).unwrap() - 0.2).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn round_trip(s in 0.5f64..200.0, m in -0.3f64..0.3, tau in 0.01f64..2.0, sigma in 0.05f64..1.5) {
            let k = s * m.exp();
            let p = bs_price(s, k, tau, sigma);
            // below this the price carries no information about sigma in double precision
            prop_assume!(p - (s - k).max(0.0) > 1e-7 * s);
            let iv = implied_vol(p, s, k, tau).unwrap();
            prop_assert!((iv - sigma).abs() < 1e-8, "{} vs {}", iv, sigma);
            prop_assert!((bs_price(s, k, tau, iv) - p).abs() < 1e-10);
        }

        #[test]
        fn vol_is_monotone_in_price(s in 0.5f64..2.0, m in -0.2f64..0.2, tau in 0.02f64..1.0,
                                    s1 in 0.05f64..1.0, s2 in 0.05f64..1.0) {
            let k = s * m.exp();
            let (p1, p2) = (bs_price(s, k, tau, s1), bs_price(s, k, tau, s2));
            prop_assume!((p1 - p2).abs() > 1e-10 && p1.min(p2) - (s - k).max(0.0) > 1e-9);
            let (v1, v2) = (implied_vol(p1, s, k, tau).unwrap(), implied_vol(p2, s, k, tau).unwrap());
            prop_assert_eq!(p1 < p2, v1 < v2);
        }
    }
}
