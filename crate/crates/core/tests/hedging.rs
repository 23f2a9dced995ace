use proptest::prelude::*;
use qrheston::hedging::{
    hedge_path, hedge_ratio_dml, run_hedge_market, run_hedge_synthetic, synthetic_path_runs, train_hedging_network, DmlSampling, HedgeMethod, Hedgers,
    MarketSeries, MarketSetup, SyntheticSetup,
};
use qrheston::kernel::{build_kernel, KernelApprox};
use qrheston::model::{FactorState, ModelParams};
use qrheston::nn::{Arch, MlpNetwork, Scaling, TrainConfig};
use qrheston::pricing::{bs_delta, SPX_LOGM};

fn kernel() -> KernelApprox {
    build_kernel(0.51, 10, 3.92).unwrap()
}

fn surface_net(seed: u64) -> MlpNetwork {
    let mut net = MlpNetwork::new(Arch::MtpSpx, Scaling::identity(15, 60), seed).unwrap();
    net.params.iter_mut().for_each(|p| *p *= 0.3);
    net.scaling.out_center = (0..60).map(|i| 0.2 - 0.2 * SPX_LOGM[i / 4]).collect();
    net.scaling.out_scale = vec![0.02; 60];
    net.scaling.in_scale = vec![2.0; 15];
    net
}

fn small_setup() -> SyntheticSetup {
    SyntheticSetup { maturity: 0.072, sim_dt: 0.0036, price_paths: 400, hedge_paths: 12, seed: 3, ..SyntheticSetup::default() }
}

#[test]
fn market_replay_of_a_simulated_path_reproduces_its_pnl() {
    let k = kernel();
    let setup = small_setup();
    let net = surface_net(4);
    let nets = Hedgers { mtp: Some(&net), dml: None };
    let p0 = 3.1;
    for method in [HedgeMethod::Mtp, HedgeMethod::BlackScholesFixed] {
        let runs = synthetic_path_runs(&k, &setup, 0.0036, method, nets, p0).unwrap();
        assert_eq!(runs.len(), setup.hedge_paths);
        for run in &runs {
            let series = MarketSeries {
                dates: (0..run.steps.len()).map(|d| format!("d{d}")).collect(),
                spot: run.steps.iter().map(|s| s.spot).collect(),
                option: run.steps.iter().map(|s| s.j_p + p0).collect(),
            };
            let market = MarketSetup { strike: setup.strike, maturity: setup.maturity, day_dt: 0.0036 };
            let replay = run_hedge_market(&series, &market, &setup.params, &k, &setup.z0, method, nets, None).unwrap();
            assert_eq!(replay.steps.len(), run.steps.len());
            for (a, b) in run.steps.iter().zip(&replay.steps) {
                assert!((a.j - b.j).abs() < 1e-9, "{method:?} at t={}: {} vs {}", a.t, a.j, b.j);
                match (a.ratio, b.ratio) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9),
                    (None, None) => {}
                    other => panic!("ratio mismatch {other:?}"),
                }
            }
        }
    }
}

#[test]
fn pnl_starts_at_zero_and_satisfies_the_accounting_identity() {
    let k = kernel();
    let setup = small_setup();
    let net = surface_net(5);
    let runs = synthetic_path_runs(&k, &setup, 0.0036, HedgeMethod::Mtp, Hedgers { mtp: Some(&net), dml: None }, 2.7).unwrap();
    for run in runs {
        assert_eq!(run.steps[0].j, 0.0);
        let last = run.steps.last().unwrap();
        let payoff = (last.spot - setup.strike).max(0.0);
        assert!((last.j_p - (payoff - 2.7)).abs() < 1e-12);
        assert!((last.j - (last.j_delta - last.j_p)).abs() < 1e-12);
    }
}

#[test]
fn a_nearly_deterministic_asset_leaves_no_terminal_pnl() {
    let k = kernel();
    let setup = SyntheticSetup {
        params: ModelParams::new(1.0, 1.2, 0.0, 0.2, 1e-16),
        maturity: 0.08,
        price_paths: 50,
        hedge_paths: 50,
        ..SyntheticSetup::default()
    };
    let net = surface_net(1);
    let report = run_hedge_synthetic(&k, &setup, &[0.0012, 0.0036], &[HedgeMethod::Mtp], Hedgers { mtp: Some(&net), dml: None }).unwrap();
    assert!((report.p0 - 2.0).abs() < 1e-4);
    for s in &report.summaries {
        assert!(s.terminal.iter().all(|j| j.abs() < 1e-4), "{:?}", s.terminal);
    }
}

#[test]
fn finer_rebalancing_does_not_widen_the_pnl() {
    let k = kernel();
    let setup = SyntheticSetup { maturity: 0.0792, sim_dt: 0.0012, price_paths: 4000, hedge_paths: 2000, seed: 11, ..SyntheticSetup::default() };
    let dts = [0.0072, 0.0036, 0.0012];
    let report = run_hedge_synthetic(&k, &setup, &dts, &[HedgeMethod::BlackScholesFixed], Hedgers::default()).unwrap();
    let stds: Vec<f64> = report.summaries.iter().map(|s| s.std).collect();
    assert!(stds.windows(2).all(|w| w[1] <= w[0]), "{stds:?}");
    for s in &report.summaries {
        assert!(s.mean.abs() < 4.0 * s.std / (s.paths as f64).sqrt() + 0.05 * report.p0, "{} {}", s.mean, s.std);
    }
}

#[test]
fn differential_network_recovers_black_scholes_without_feedback() {
    let k = kernel();
    let params = ModelParams::new(1.0, 1.2, 0.0, 0.2, 0.04);
    let strike = 1.0;
    let sampling = DmlSampling { seed: 2, ..DmlSampling::default() };
    let cfg = TrainConfig { seed: 3, ..TrainConfig::for_arch(Arch::Dml) };
    let (net, _) = train_hedging_network(&params, &k, strike, &sampling, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for s in [0.95, 1.0, 1.05] {
        for tau in [0.04, 0.06, 0.08] {
            let r = hedge_ratio_dml(&net, &params, &FactorState::new(s, vec![0.0; 10]), strike, tau).unwrap();
            worst = worst.max((r.ratio - bs_delta(s, strike, tau, 0.2)).abs());
        }
    }
    assert!(worst < 0.05, "worst delta error {worst}");
}

proptest! {
    #[test]
    fn bookkeeping_identities(
        moves in prop::collection::vec((-0.05..0.05f64, 0.0..5.0f64, -1.0..2.0f64), 2..30),
        p0 in 0.5..5.0f64,
    ) {
        let mut spots = vec![100.0];
        for (m, _, _) in &moves {
            let s = spots[spots.len() - 1] * (1.0 + m);
            spots.push(s);
        }
        let times: Vec<f64> = (0..spots.len()).map(|k| k as f64 * 0.01).collect();
        let mut prices: Vec<f64> = std::iter::once(p0).chain(moves.iter().map(|(_, p, _)| *p)).collect();
        let last = prices.len() - 1;
        prices[last] = (spots[last] - 100.0).max(0.0);
        let mut seen = vec![];
        let (steps, clamped) = hedge_path(&times, &spots, &prices, p0, |k| {
            seen.push(k);
            Ok((moves[k].2, false))
        }).unwrap();
        prop_assert_eq!(clamped, 0);
        prop_assert_eq!(seen, (0..last).collect::<Vec<_>>());
        prop_assert_eq!(steps[0].j, 0.0);
        let mut jd = 0.0;
        for k in 0..=last {
            prop_assert!((steps[k].j_delta - jd).abs() < 1e-9);
            prop_assert!((steps[k].j - (steps[k].j_delta - (prices[k] - p0))).abs() < 1e-9);
            if k < last {
                jd += moves[k].2 * (spots[k + 1] - spots[k]);
            }
        }
        prop_assert!(steps[last].ratio.is_none());
    }
}
