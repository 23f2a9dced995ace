use proptest::prelude::*;
use qrheston::kernel::{build_kernel, KernelApprox};
use qrheston::mc::{pathwise_derivatives, simulate, SimConfig, ASSET_FLOOR};
use qrheston::model::{initial_mean_curve, ModelParams};
use qrheston::pricing::{bs_price, estimate_payoffs};

fn kernel() -> KernelApprox {
    build_kernel(0.51, 10, 3.92).unwrap()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn constant_variance_prices_match_black_scholes() {
    let k = kernel();
    let p = ModelParams::new(1.0, 1.2, 0.0, 0.2, 0.04);
    let cfg = SimConfig::with_step(0.09, 0.0012, 40_000, 5);
    let strikes = [0.95, 1.0, 1.05];
    let est = estimate_payoffs(&p, &k, &[0.0; 10], 1.0, &cfg, 3, |path, out| {
        let s = path.s[path.s.len() - 1];
        for (o, k) in out.iter_mut().zip(&strikes) {
            *o = (s - k).max(0.0);
        }
    })
    .unwrap();
    for (i, &strike) in strikes.iter().enumerate() {
        let bs = bs_price(1.0, strike, 0.09, 0.2);
        // Euler bias on 75 steps is far below the statistical error
        assert!((est.mean[i] - bs).abs() < 4.0 * est.std_error[i] + 1e-4, "K={strike}: {} vs {bs}", est.mean[i]);
    }
}

#[test]
fn asset_is_a_martingale() {
    let k = kernel();
    let p = ModelParams::new(1.0, 1.2, 0.35, 0.2, 0.0025);
    let cfg = SimConfig::with_step(0.08, 0.0012, 20_000, 9);
    let b = simulate(&p, &k, &[0.05; 10], 100.0, &cfg).unwrap();
    let terminal: Vec<f64> = (0..b.paths).map(|i| b.s_at(i, b.steps())).collect();
    let (m, se) = mean_se(&terminal);
    assert!((m - 100.0).abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn factor_mean_follows_the_mean_curve() {
    let k = kernel();
    let z0 = [0.1, -0.05, 0.02, 0.0, 0.03, -0.01, 0.05, 0.0, 0.02, 0.01];
    // without vol-of-vol the factors are deterministic; the implicit update is first order
    let p = ModelParams::new(2.0, 0.0, 0.35, 0.2, 0.01);
    let curve = initial_mean_curve(&p, &k, &z0).unwrap();
    let errors = |dt: f64| {
        let b = simulate(&p, &k, &z0, 1.0, &SimConfig::with_step(0.09, dt, 8, 1)).unwrap();
        let per = (0.009 / dt).round() as usize;
        [per, 5 * per, 10 * per]
            .iter()
            .map(|&step| {
                for i in 1..b.paths {
                    assert_eq!(b.z_at(i, step), b.z_at(0, step));
                }
                let agg: f64 = b.z_at(0, step).iter().zip(&k.c).map(|(z, c)| z * c).sum();
                (agg - curve.expected_z(b.times[step]).unwrap()).abs()
            })
            .collect::<Vec<f64>>()
    };
    let (coarse, fine) = (errors(0.0006), errors(0.00015));
    for (c, f) in coarse.iter().zip(&fine) {
        assert!(*f < c / 3.0 && *f < 1e-3, "{coarse:?} -> {fine:?}");
    }
    // with noise the mean still follows the curve
    let p = ModelParams { eta: 1.2, ..p };
    let cfg = SimConfig::with_step(0.09, 0.0012, 20_000, 2);
    let b = simulate(&p, &k, &z0, 1.0, &cfg).unwrap();
    let curve = initial_mean_curve(&p, &k, &z0).unwrap();
    let last = b.steps();
    let aggs: Vec<f64> = (0..b.paths).map(|i| b.z_at(i, last).iter().zip(&k.c).map(|(z, c)| z * c).sum()).collect();
    let (m, se) = mean_se(&aggs);
    let exact = curve.expected_z(b.times[last]).unwrap();
    assert!((m - exact).abs() < 4.0 * se + 2e-3, "{m} ± {se} vs {exact}");
}

#[test]
fn implicit_factor_update_is_stable_on_coarse_steps() {
    let k = kernel();
    let gmax = k.gamma.iter().cloned().fold(0.0, f64::max);
    let dt = 0.01;
    // an explicit update would amplify by |1 - γ dt| > 1 here
    assert!(gmax * dt > 2.0);
    let p = ModelParams::new(1.0, 1.2, 0.35, 0.2, 0.0025);
    let cfg = SimConfig::with_step(1.0, dt, 200, 3);
    let b = simulate(&p, &k, &[0.2; 10], 1.0, &cfg).unwrap();
    assert!(b.z.iter().all(|z| z.is_finite() && z.abs() < 5.0));
    assert!(b.v.iter().all(|v| v.is_finite() && *v >= p.c));
}

#[test]
fn pathwise_derivatives_match_bump_and_revalue() {
    let k = kernel();
    let p = ModelParams::new(1.0, 1.2, 0.35, 0.2, 0.0025);
    let z0 = [0.02; 10];
    let cfg = SimConfig::with_step(0.08, 0.0012, 20, 17);
    let strike = 98.0;
    let base = simulate(&p, &k, &z0, 100.0, &cfg).unwrap();
    let m = base.steps();
    let sens = &pathwise_derivatives(&base, &p, &k, strike, &[m]).unwrap()[0];
    let h = 1e-6;
    let payoffs = |s0: f64, z: &[f64]| {
        let b = simulate(&p, &k, z, s0, &cfg).unwrap();
        (0..b.paths).map(|i| (b.s_at(i, m) - strike).max(0.0)).collect::<Vec<f64>>()
    };
    for j in 0..=10 {
        let (mut up, mut dn) = ((100.0, z0.to_vec()), (100.0, z0.to_vec()));
        if j == 0 {
            up.0 += h;
            dn.0 -= h;
        } else {
            up.1[j - 1] += h;
            dn.1[j - 1] -= h;
        }
        let (pu, pd) = (payoffs(up.0, &up.1), payoffs(dn.0, &dn.1));
        for i in 0..base.paths {
            if sens.excluded[i] {
                continue;
            }
            let fd = (pu[i] - pd[i]) / (2.0 * h);
            let pw = sens.row(i)[j];
            assert!((fd - pw).abs() < 1e-4 * pw.abs().max(1.0), "path {i} coord {j}: {pw} vs {fd}");
        }
    }
}

#[test]
fn antithetic_pairs_reduce_the_error_of_a_near_linear_payoff() {
    let k = kernel();
    let p = ModelParams::new(1.0, 1.2, 0.35, 0.2, 0.0025);
    let run = |anti: bool| {
        let mut cfg = SimConfig::with_step(0.08, 0.0012, 4_000, 4);
        cfg.antithetic = anti;
        estimate_payoffs(&p, &k, &[0.0; 10], 1.0, &cfg, 1, |path, out| out[0] = (path.s[path.s.len() - 1] - 0.9).max(0.0)).unwrap()
    };
    let (plain, anti) = (run(false), run(true));
    assert!(anti.std_error[0] < plain.std_error[0], "{} vs {}", anti.std_error[0], plain.std_error[0]);
    assert!((anti.mean[0] - plain.mean[0]).abs() < 4.0 * plain.std_error[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn paths_respect_the_state_bounds(
        lambda in 0.5..2.5f64, eta in 1.0..1.5f64, a in 0.1..0.6f64, b in 0.01..0.5f64,
        c in 1e-4..0.03f64, z in -0.5..0.5f64, seed in 0u64..1000,
    ) {
        let k = kernel();
        let p = ModelParams::new(lambda, eta, a, b, c);
        let cfg = SimConfig::with_step(0.05, 0.0025, 16, seed);
        let bundle = simulate(&p, &k, &[z; 10], 1.0, &cfg).unwrap();
        prop_assert!(bundle.v.iter().all(|&v| v >= c && v.is_finite()));
        prop_assert!(bundle.s.iter().all(|&s| s >= ASSET_FLOOR * 0.5 && s.is_finite()));
        prop_assert!(bundle.z.iter().all(|z| z.is_finite()));
        for i in 0..bundle.paths {
            prop_assert_eq!(bundle.s_at(i, 0), 1.0);
            prop_assert_eq!(bundle.z_at(i, 0), &[z; 10][..]);
        }
        prop_assert_eq!(simulate(&p, &k, &[z; 10], 1.0, &cfg).unwrap(), bundle);
    }
}
