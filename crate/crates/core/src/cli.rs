//! Command-line front end. Values come from the built-in defaults, then the `--config`
//! TOML file, then flags. Every artifact carries the effective configuration or its hash.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::calibration::{
    attach_reconstruction, calibrate_mtp, calibrate_ptm, reconstruct, write_batch_csv, BatchRow, CalibrationResult, PARAM_NAMES,
};
use crate::config::RunConfig;
use crate::dataset::{fit_normalization, generate_corpus, Corpus, CorpusSpec, Split, SplitCounts};
use crate::error::{Error, Result};
use crate::hedging::{
    run_hedge_market, run_hedge_synthetic, train_hedging_network, HedgeMethod, HedgeRun, Hedgers, MarketSeries,
};
use crate::kernel::{build_kernel, fit_kernel, l2_error, KernelApprox, L2Quadrature};
use crate::mc::{simulate, write_paths_bin, write_paths_csv, SimConfig};
use crate::model::{ModelParams, ModelSpec};
use crate::nn::{load_network, save_network, surface_training_data, train, Arch, History, MlpNetwork, NetworkManifest, Scaling};
use crate::pricing::{price_spx_surface, price_surfaces, AssetClass, IVSurface, SurfaceGrid};
use crate::provenance::Provenance;
use crate::report::{write_heatmap, write_rmse_series, write_smile_slices};

#[derive(Debug, Parser)]
#[command(name = "qrheston", version, about = "Quadratic rough Heston pricing, neural calibration and hedging")]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal geometric mesh and factor coefficients of the kernel approximation
    KernelFit(KernelFitArgs),
    /// Simulate price, variance and factor paths
    Simulate(SimulateArgs),
    /// Monte Carlo SPX and VIX implied vol surfaces
    Price(PriceArgs),
    /// Generate the parameter-to-surface training corpus
    GenDataset(GenDatasetArgs),
    /// Train a surface, inverse or hedging network
    Train(TrainArgs),
    /// Calibrate to one pair of surfaces or to a batch of dated pairs
    Calibrate(CalibrateArgs),
    /// Delta-hedging P&L on simulated paths or on a market series
    Hedge(HedgeArgs),
    /// Plot-ready tables from stored results
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct KernelFitArgs {
    /// Roughness α [default: 0.51]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of factors [default: 10]
    #[arg(long)]
    pub n: Option<usize>,
    /// Fitting horizon [default: 0.1]
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Use this mesh instead of searching for the optimum
    #[arg(long)]
    pub mesh: Option<f64>,
    /// Output JSON file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathFormat {
    Csv,
    Bin,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model JSON (`lambda, eta, a, b, c, z0`) [default: config model]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of paths [default: 10000]
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time step [default: 0.0012]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Horizon [default: 0.09]
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Initial asset level [default: 1]
    #[arg(long)]
    pub s0: Option<f64>,
    /// Pair every path with its sign-flipped twin
    #[arg(long)]
    pub antithetic: bool,
    #[arg(long, value_enum, default_value_t = PathFormat::Csv)]
    pub format: PathFormat,
    /// Output file [default: <out_dir>/paths.csv|bin]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    /// Model JSON [default: config model]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of paths [default: 10000]
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time step [default: 0.0012]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Price the constant-variance case (a = 0, λ = 0, c = 0.04) and check the SPX
    /// surface is flat at 0.20 within max(ci_half, 0.002)
    #[arg(long)]
    pub flat_check: bool,
    /// Output directory [default: <out_dir>/price]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Output directory [default: config io.corpus]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total samples, split 15:2:1 [default: 2000/300/200]
    #[arg(long)]
    pub total: Option<usize>,
    /// Paths per sample [default: 10000]
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time step [default: 0.0012]
    #[arg(long)]
    pub dt: Option<f64>,
    /// 150,000 / 20,000 / 10,000 samples at 50,000 paths
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    Ptm,
    MtpSpx,
    MtpVix,
    Dml,
    /// ptm, mtp-spx and mtp-vix
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: TrainTarget,
    /// Corpus directory [default: config io.corpus]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory for `<arch>.qrhn` [default: config io.networks]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epochs [default: 500, dml 20; 150 with --paper-schedule]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use the published schedule (batch 128, lr 0.001 halved every 10 epochs, patience 5)
    /// instead of the desk-scale one
    #[arg(long)]
    pub paper_schedule: bool,
    /// Strike of the hedging network [default: 98]
    #[arg(long)]
    pub strike: Option<f64>,
    /// Differential samples [default: 50000]
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibMethod {
    Mtp,
    Ptm,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_enum, default_value_t = CalibMethod::Mtp)]
    pub method: CalibMethod,
    /// Target SPX surface CSV (asset_class,logm,maturity,vol[,ci_half])
    #[arg(long)]
    pub spx: Option<PathBuf>,
    /// Target VIX surface CSV
    #[arg(long)]
    pub vix: Option<PathBuf>,
    /// Batch file with rows `label,spx_csv,vix_csv` (paths relative to the file)
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Directory holding ptm.qrhn, mtp-spx.qrhn, mtp-vix.qrhn [default: config io.networks]
    #[arg(long)]
    pub networks: Option<PathBuf>,
    /// Multi-start count [default: 8]
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Output directory [default: <out_dir>/calibrate]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HedgeMode {
    Synthetic,
    Market,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mtp,
    Dml,
    Bs,
}

impl From<MethodArg> for HedgeMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mtp => HedgeMethod::Mtp,
            MethodArg::Dml => HedgeMethod::Dml,
            MethodArg::Bs => HedgeMethod::BlackScholesFixed,
        }
    }
}

#[derive(Debug, Args)]
pub struct HedgeArgs {
    #[arg(long, value_enum, default_value_t = HedgeMode::Synthetic)]
    pub mode: HedgeMode,
    /// Hedging method, repeatable [default: mtp, dml, bs]
    #[arg(long, value_enum)]
    pub method: Vec<MethodArg>,
    /// Forward SPX network [default: <networks>/mtp-spx.qrhn if present]
    #[arg(long)]
    pub net_spx: Option<PathBuf>,
    /// Hedging network [default: <networks>/dml.qrhn if present, else trained on the fly]
    #[arg(long)]
    pub net_dml: Option<PathBuf>,
    /// Rebalancing step, repeatable [default: 0.0012, 0.0036]
    #[arg(long)]
    pub rebalance_dt: Vec<f64>,
    /// Hedged paths [default: 5000]
    #[arg(long)]
    pub paths: Option<usize>,
    /// Paths for the initial price [default: 50000]
    #[arg(long)]
    pub price_paths: Option<usize>,
    /// Market CSV `date,spot,option_price` (market mode)
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Day-one calibration: model JSON or a calibration result (market mode)
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Batch calibration CSV with one row per date, labelled by date (market mode)
    #[arg(long)]
    pub recalibrate_daily: Option<PathBuf>,
    /// Strike [default: 98, market mode from config]
    #[arg(long)]
    pub strike: Option<f64>,
    /// Time to maturity on the first date [default: 0.08]
    #[arg(long)]
    pub maturity: Option<f64>,
    /// Year fraction between market rows [default: 1/252]
    #[arg(long)]
    pub day_dt: Option<f64>,
    /// Output directory [default: <out_dir>/hedge]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// logm,maturity,vol_model[,vol_bid][,vol_ask]
    Smile,
    /// asset_class,logm,maturity,vol_model,vol_target,abs_error,ci_half,within_ci
    Heatmap,
    /// label,rmse_spx,rmse_vix
    Rmse,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    /// Model surface CSV (smile, heatmap)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target surface CSV (heatmap)
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Bid vol surface CSV (smile)
    #[arg(long)]
    pub bid: Option<PathBuf>,
    /// Ask vol surface CSV (smile)
    #[arg(long)]
    pub ask: Option<PathBuf>,
    /// Batch calibration CSV (rmse)
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code. Failures print a
/// one-line JSON record `{"error": {"kind", "message"}}` on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.to_string().trim()}}));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default().resolved(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(t) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match cli.command {
        Command::KernelFit(a) => kernel_fit(cfg, a),
        Command::Simulate(a) => simulate_cmd(cfg, a),
        Command::Price(a) => price_cmd(cfg, a),
        Command::GenDataset(a) => gen_dataset(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Calibrate(a) => calibrate_cmd(cfg, a),
        Command::Hedge(a) => hedge_cmd(cfg, a),
        Command::Report(a) => report_cmd(a),
    }
}

fn missing(path: &Path) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{}: no such file or directory", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { missing(path) } else { e.into() })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// `# qrheston <version> seed=<s> config_hash=<h>`
fn stamp(cfg: &RunConfig) -> String {
    let p = cfg.provenance();
    format!("# {} {} seed={} config_hash={}\n", p.tool, p.version, p.seed, p.config_hash)
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    provenance: Provenance,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, cfg: &RunConfig, body: T) -> Result<()> {
    let a = Artifact { provenance: cfg.provenance(), config: cfg, body };
    let mut text = serde_json::to_string_pretty(&a)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv(path: &Path, cfg: &RunConfig, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = stamp(cfg).into_bytes();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn kernel_of(cfg: &RunConfig) -> Result<KernelApprox> {
    let k = &cfg.kernel;
    match k.mesh {
        Some(x) => Ok(build_kernel(k.alpha, k.n, x)?.with_horizon(k.horizon)),
        None => fit_kernel(k.alpha, k.n, k.horizon),
    }
}

fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = read_text(path)?;
    if let Ok(spec) = serde_json::from_str::<ModelSpec>(&text) {
        spec.params.validate()?;
        return Ok(spec);
    }
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let body = v.get("result").cloned().unwrap_or(v);
    let r: CalibrationResult = serde_json::from_value(body).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok(ModelSpec { params: ModelParams::from_omega(&r.omega_hat, crate::kernel::DEFAULT_ALPHA)?, z0: r.z0_hat })
}

fn kernel_fit(mut cfg: RunConfig, a: KernelFitArgs) -> Result<()> {
    if let Some(v) = a.alpha {
        cfg.kernel.alpha = v;
    }
    if let Some(v) = a.n {
        cfg.kernel.n = v;
    }
    if let Some(v) = a.horizon {
        cfg.kernel.horizon = v;
    }
    cfg.kernel.mesh = a.mesh;
    let k = kernel_of(&cfg)?;
    let err = l2_error(&k, cfg.kernel.horizon, L2Quadrature::default())?;
    let body = json!({"kernel": k, "x_star": k.x_n, "l2_error": err});
    match a.out {
        Some(p) => write_json(&p, &cfg, body),
        None => {
            let a = Artifact { provenance: cfg.provenance(), config: &cfg, body };
            println!("{}", serde_json::to_string_pretty(&a)?);
            Ok(())
        }
    }
}

fn model_of(cfg: &mut RunConfig, path: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = path {
        cfg.model = load_model(p)?;
    }
    cfg.model.params.validate()
}

fn simulate_cmd(mut cfg: RunConfig, a: SimulateArgs) -> Result<()> {
    model_of(&mut cfg, &a.model)?;
    if let Some(v) = a.paths {
        cfg.sim.paths = v;
    }
    if let Some(v) = a.dt {
        cfg.sim.dt = v;
    }
    if let Some(v) = a.horizon {
        cfg.sim.horizon = v;
    }
    if let Some(v) = a.s0 {
        cfg.sim.s0 = v;
    }
    cfg.sim.antithetic |= a.antithetic;
    let kernel = kernel_of(&cfg)?;
    let mut sim = SimConfig::with_step(cfg.sim.horizon, cfg.sim.dt, cfg.sim.paths, cfg.seed);
    sim.antithetic = cfg.sim.antithetic;
    let bundle = simulate(&cfg.model.params, &kernel, &cfg.model.z0, cfg.sim.s0, &sim)?;
    let out = a.out.unwrap_or_else(|| {
        cfg.io.out_dir.join(match a.format {
            PathFormat::Csv => "paths.csv",
            PathFormat::Bin => "paths.bin",
        })
    });
    if let Some(d) = out.parent() {
        create_dir(d)?;
    }
    match a.format {
        PathFormat::Csv => write_csv(&out, &cfg, |w| write_paths_csv(&bundle, w))?,
        PathFormat::Bin => {
            let mut buf = vec![];
            write_paths_bin(&bundle, &mut buf)?;
            fs::write(&out, buf)?;
        }
    }
    write_json(&out.with_extension("json"), &cfg, json!({"paths": bundle.paths, "steps": bundle.steps(), "absorbed_fraction": bundle.absorbed_fraction()}))
}

fn price_cmd(mut cfg: RunConfig, a: PriceArgs) -> Result<()> {
    model_of(&mut cfg, &a.model)?;
    if let Some(v) = a.paths {
        cfg.sim.paths = v;
    }
    if let Some(v) = a.dt {
        cfg.sim.dt = v;
    }
    if a.flat_check {
        cfg.model.params.a = 0.0;
        cfg.model.params.lambda = 0.0;
        cfg.model.params.c = 0.04;
    }
    let dir = a.out.unwrap_or_else(|| cfg.io.out_dir.join("price"));
    create_dir(&dir)?;
    let kernel = kernel_of(&cfg)?;
    let mut sim = SimConfig::with_step(cfg.sim.horizon, cfg.sim.dt, cfg.sim.paths, cfg.seed);
    sim.antithetic = cfg.sim.antithetic;
    let (p, z0) = (&cfg.model.params, &cfg.model.z0);
    let spx_grid = SurfaceGrid::default_for(AssetClass::Spx);
    if a.flat_check {
        let spx = price_spx_surface(p, &kernel, z0, &sim, &spx_grid)?;
        let target = 0.04f64.sqrt();
        let ci = spx.ci_half.clone().unwrap_or_else(|| vec![f64::NAN; spx.len()]);
        let mut worst: f64 = 0.0;
        let mut failures = vec![];
        for (i, (v, h)) in spx.vols.iter().zip(&ci).enumerate() {
            let tol = if h.is_finite() { h.max(0.002) } else { 0.002 };
            let dev = (v - target).abs();
            if dev.is_finite() {
                worst = worst.max(dev);
            }
            if !(dev <= tol) {
                failures.push(json!({"index": i, "logm": spx_grid.strikes_logm[i / spx_grid.maturities.len()],
                    "maturity": spx_grid.maturities[i % spx_grid.maturities.len()], "vol": v, "ci_half": h}));
            }
        }
        let flat = failures.is_empty();
        write_csv(&dir.join("spx.csv"), &cfg, |w| spx.write_csv(w, true))?;
        write_json(&dir.join("flat_check.json"), &cfg, json!({"target_vol": target, "max_abs_deviation": worst, "flat": flat, "failures": failures}))?;
        println!("flat check: max |vol - {target}| = {worst:.5}, {} point(s) outside tolerance", failures.len());
        return Ok(());
    }
    let vix_grid = SurfaceGrid::default_for(AssetClass::Vix);
    let (spx, vix) = price_surfaces(p, &kernel, z0, &sim, &spx_grid, &vix_grid)?;
    write_csv(&dir.join("spx.csv"), &cfg, |w| spx.write_csv(w, true))?;
    write_csv(&dir.join("vix.csv"), &cfg, |w| vix.write_csv(w, true))?;
    write_json(&dir.join("surfaces.json"), &cfg, json!({"spx": spx, "vix": vix}))
}

fn gen_dataset(mut cfg: RunConfig, a: GenDatasetArgs) -> Result<()> {
    if a.paper_scale {
        let p = CorpusSpec::paper_scale(cfg.seed);
        cfg.dataset.train = p.counts.train;
        cfg.dataset.validation = p.counts.validation;
        cfg.dataset.test = p.counts.test;
        cfg.dataset.paths = p.paths;
    }
    if let Some(n) = a.total {
        let c = SplitCounts::from_total(n)?;
        cfg.dataset.train = c.train;
        cfg.dataset.validation = c.validation;
        cfg.dataset.test = c.test;
    }
    if let Some(v) = a.paths {
        cfg.dataset.paths = v;
    }
    if let Some(v) = a.dt {
        cfg.dataset.dt = v;
    }
    let out = a.out.unwrap_or_else(|| cfg.io.corpus.clone());
    let corpus = generate_corpus(&cfg.corpus_spec(), &out)?;
    for s in &corpus.splits {
        println!("{}: {} samples ({} redrawn)", s.split.name(), s.count, s.redrawn);
    }
    Ok(())
}

fn save_trained(dir: &Path, cfg: &RunConfig, net: &MlpNetwork, tc: &crate::nn::TrainConfig, h: &History) -> Result<PathBuf> {
    let mut m = NetworkManifest::describe(net);
    m.train = Some(tc.clone());
    m.best_epoch = h.best_epoch;
    m.best_val_loss = h.best_val_loss;
    m.provenance = Some(cfg.provenance());
    let path = dir.join(format!("{}.qrhn", net.arch.as_str()));
    save_network(&path, net, &m)?;
    write_json(&dir.join(format!("{}.history.json", net.arch.as_str())), cfg, json!({"history": h}))?;
    Ok(path)
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let dir = a.out.clone().unwrap_or_else(|| cfg.io.networks.clone());
    create_dir(&dir)?;
    if a.paper_schedule {
        let seeds = [cfg.train.ptm.seed, cfg.train.mtp_spx.seed, cfg.train.mtp_vix.seed, cfg.train.dml.seed];
        cfg.train = crate::config::TrainSection::paper_scale();
        for (t, s) in [&mut cfg.train.ptm, &mut cfg.train.mtp_spx, &mut cfg.train.mtp_vix, &mut cfg.train.dml].into_iter().zip(seeds) {
            t.seed = s;
        }
    }
    if a.arch == TrainTarget::Dml {
        if let Some(v) = a.epochs {
            cfg.train.dml.epochs = v;
        }
        if let Some(v) = a.strike {
            cfg.hedge.synthetic.strike = v;
        }
        if let Some(v) = a.samples {
            cfg.hedge.dml.samples = v;
            cfg.hedge.dml.validation = v / 10;
        }
        let kernel = kernel_of(&cfg)?;
        let h = &cfg.hedge;
        let (net, hist) = train_hedging_network(&h.synthetic.params, &kernel, h.synthetic.strike, &h.dml, &cfg.train.dml)?;
        let path = save_trained(&dir, &cfg, &net, &cfg.train.dml, &hist)?;
        println!("{}: best epoch {:?}, validation {:?}", path.display(), hist.best_epoch, hist.best_val_loss);
        return Ok(());
    }
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| cfg.io.corpus.clone());
    if !corpus_dir.join("meta.jsonl").exists() {
        return Err(missing(&corpus_dir.join("meta.jsonl")));
    }
    let corpus = Corpus::open(&corpus_dir)?;
    let train_set = corpus.load(Split::Train)?;
    let val_set = corpus.load(Split::Validation)?;
    let stats = fit_normalization(&train_set)?;
    write_json(&dir.join("normalization.json"), &cfg, json!({"stats": stats}))?;
    let archs: Vec<Arch> = match a.arch {
        TrainTarget::Ptm => vec![Arch::Ptm],
        TrainTarget::MtpSpx => vec![Arch::MtpSpx],
        TrainTarget::MtpVix => vec![Arch::MtpVix],
        _ => vec![Arch::Ptm, Arch::MtpSpx, Arch::MtpVix],
    };
    for arch in archs {
        let mut tc = cfg.train.get(arch);
        if let Some(v) = a.epochs {
            tc.epochs = v;
        }
        let mut net = MlpNetwork::new(arch, Scaling::from_stats(arch, &stats)?, tc.seed)?;
        net.norm_hash = stats.train_hash.clone();
        let data = surface_training_data(arch, &train_set, &stats)?;
        let val = if val_set.is_empty() { None } else { Some(surface_training_data(arch, &val_set, &stats)?) };
        let hist = train(&mut net, &data, val.as_ref(), &tc)?;
        let path = save_trained(&dir, &cfg, &net, &tc, &hist)?;
        println!("{}: best epoch {:?}, validation {:?}", path.display(), hist.best_epoch, hist.best_val_loss);
    }
    Ok(())
}

fn load_net(path: &Path) -> Result<MlpNetwork> {
    if !path.exists() {
        return Err(missing(path));
    }
    Ok(load_network(path)?.0)
}

fn read_surface(path: &Path) -> Result<IVSurface> {
    IVSurface::read_csv(&read_text(path)?)
}

struct CalibNets {
    spx: Option<MlpNetwork>,
    vix: Option<MlpNetwork>,
    ptm: Option<MlpNetwork>,
}

fn calibrate_one(method: CalibMethod, nets: &CalibNets, cfg: &RunConfig, spx: &IVSurface, vix: &IVSurface) -> Result<CalibrationResult> {
    match method {
        CalibMethod::Mtp => {
            let (s, v) = (nets.spx.as_ref().expect("loaded"), nets.vix.as_ref().expect("loaded"));
            calibrate_mtp(s, v, spx, vix, &cfg.calib, None)
        }
        CalibMethod::Ptm => {
            let mut r = calibrate_ptm(nets.ptm.as_ref().expect("loaded"), spx, vix)?;
            if let (Some(s), Some(v)) = (&nets.spx, &nets.vix) {
                attach_reconstruction(&mut r, s, v, spx, vix)?;
            }
            Ok(r)
        }
    }
}

fn calibrate_cmd(mut cfg: RunConfig, a: CalibrateArgs) -> Result<()> {
    if let Some(r) = a.restarts {
        cfg.calib.restarts = r;
    }
    let nd = a.networks.clone().unwrap_or_else(|| cfg.io.networks.clone());
    let optional = |name: &str| -> Result<Option<MlpNetwork>> {
        let p = nd.join(name);
        if p.exists() { Ok(Some(load_net(&p)?)) } else { Ok(None) }
    };
    let nets = match a.method {
        CalibMethod::Mtp => CalibNets { spx: Some(load_net(&nd.join("mtp-spx.qrhn"))?), vix: Some(load_net(&nd.join("mtp-vix.qrhn"))?), ptm: None },
        CalibMethod::Ptm => CalibNets { spx: optional("mtp-spx.qrhn")?, vix: optional("mtp-vix.qrhn")?, ptm: Some(load_net(&nd.join("ptm.qrhn"))?) },
    };
    let dir = a.out.clone().unwrap_or_else(|| cfg.io.out_dir.join("calibrate"));
    create_dir(&dir)?;
    if let Some(batch) = &a.batch {
        let base = batch.parent().unwrap_or(Path::new("."));
        let mut rows = vec![];
        let mut first = true;
        for (n, line) in read_text(batch)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if std::mem::take(&mut first) && line.starts_with("label") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::format(format!("{} line {}: expected label,spx_csv,vix_csv", batch.display(), n + 1)));
            }
            let spx = read_surface(&base.join(cols[1]))?;
            let vix = read_surface(&base.join(cols[2]))?;
            let result = calibrate_one(a.method, &nets, &cfg, &spx, &vix)?;
            rows.push(BatchRow { label: cols[0].to_string(), result });
        }
        write_csv(&dir.join("batch.csv"), &cfg, |w| write_batch_csv(&rows, w))?;
        return write_json(&dir.join("batch.json"), &cfg, json!({"rows": rows}));
    }
    let (Some(sp), Some(vp)) = (&a.spx, &a.vix) else {
        return Err(Error::Config("calibrate needs --spx and --vix, or --batch".into()));
    };
    let (spx, vix) = (read_surface(sp)?, read_surface(vp)?);
    let result = calibrate_one(a.method, &nets, &cfg, &spx, &vix)?;
    if let (Some(s), Some(v)) = (&nets.spx, &nets.vix) {
        let (ms, mv) = reconstruct(s, v, &result.params())?;
        for (name, class, vols) in [("model_spx.csv", AssetClass::Spx, ms), ("model_vix.csv", AssetClass::Vix, mv)] {
            let surf = IVSurface::new(class, &SurfaceGrid::default_for(class), vols)?;
            write_csv(&dir.join(name), &cfg, |w| surf.write_csv(w, true))?;
        }
    }
    println!("objective {:?}, rmse spx {:?}, rmse vix {:?}", result.objective, result.rmse_spx, result.rmse_vix);
    write_json(&dir.join("result.json"), &cfg, json!({"result": result}))
}

/// Parameters per label from a batch calibration table.
fn read_daily_params(path: &Path) -> Result<HashMap<String, ModelParams>> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::format("empty batch table"))?.split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).ok_or_else(|| Error::format(format!("batch table has no '{n}' column")));
    let label = col("label")?;
    let idx: Vec<usize> = PARAM_NAMES[..5].iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut out = HashMap::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let omega: Vec<f64> = idx
            .iter()
            .map(|&i| cols.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(format!("bad parameter row '{line}'"))))
            .collect::<Result<_>>()?;
        out.insert(cols[label].to_string(), ModelParams::from_omega(&omega, crate::kernel::DEFAULT_ALPHA)?);
    }
    Ok(out)
}

fn hedge_cmd(mut cfg: RunConfig, a: HedgeArgs) -> Result<()> {
    if !a.method.is_empty() {
        cfg.hedge.methods = a.method.iter().map(|&m| m.into()).collect();
    }
    if !a.rebalance_dt.is_empty() {
        cfg.hedge.rebalance_dts = a.rebalance_dt.clone();
    }
    if let Some(v) = a.paths {
        cfg.hedge.synthetic.hedge_paths = v;
    }
    if let Some(v) = a.price_paths {
        cfg.hedge.synthetic.price_paths = v;
    }
    if let Some(v) = a.maturity {
        cfg.hedge.synthetic.maturity = v;
        cfg.hedge.market.maturity = v;
    }
    if let Some(v) = a.day_dt {
        cfg.hedge.market.day_dt = v;
    }
    if let Some(v) = a.strike {
        cfg.hedge.synthetic.strike = v;
        cfg.hedge.market.strike = v;
    }
    cfg.hedge.recalibrate_daily |= a.recalibrate_daily.is_some();
    let dir = a.out.clone().unwrap_or_else(|| cfg.io.out_dir.join("hedge"));
    create_dir(&dir)?;
    let kernel = kernel_of(&cfg)?;
    let wants = |m: HedgeMethod| cfg.hedge.methods.contains(&m);
    let spx_path = a.net_spx.clone().unwrap_or_else(|| cfg.io.networks.join("mtp-spx.qrhn"));
    let net_spx = if a.net_spx.is_some() || spx_path.exists() {
        Some(load_net(&spx_path)?)
    } else if wants(HedgeMethod::Mtp) {
        return Err(missing(&spx_path));
    } else {
        None
    };
    let dml_path = a.net_dml.clone().unwrap_or_else(|| cfg.io.networks.join("dml.qrhn"));
    let net_dml = if a.net_dml.is_some() || dml_path.exists() {
        Some(load_net(&dml_path)?)
    } else if wants(HedgeMethod::Dml) && a.mode == HedgeMode::Synthetic {
        log::info!("no hedging network at {}, training one", dml_path.display());
        let h = &cfg.hedge;
        let (net, hist) = train_hedging_network(&h.synthetic.params, &kernel, h.synthetic.strike, &h.dml, &cfg.train.dml)?;
        save_trained(&dir, &cfg, &net, &cfg.train.dml, &hist)?;
        Some(net)
    } else if wants(HedgeMethod::Dml) {
        return Err(missing(&dml_path));
    } else {
        None
    };
    let nets = Hedgers { mtp: net_spx.as_ref(), dml: net_dml.as_ref() };
    match a.mode {
        HedgeMode::Synthetic => {
            let s = &cfg.hedge.synthetic;
            let report = run_hedge_synthetic(&kernel, s, &cfg.hedge.rebalance_dts, &cfg.hedge.methods, nets)?;
            for sm in &report.summaries {
                let tag = format!("{}_{}", sm.method.as_str(), sm.rebalance_dt);
                write_csv(&dir.join(format!("pnl_{tag}.csv")), &cfg, |w| sm.write_series(w))?;
                write_csv(&dir.join(format!("hist_{tag}.csv")), &cfg, |w| sm.write_histogram(cfg.hedge.histogram_bins, w))?;
                println!("{:>3} dt={}: mean J_T/P0 = {:+.4}, std J_T/P0 = {:.4}", sm.method.as_str(), sm.rebalance_dt, sm.mean_over_p0, sm.std_over_p0);
            }
            write_json(&dir.join("summary.json"), &cfg, json!({"report": report}))
        }
        HedgeMode::Market => {
            let series_path = a.series.as_ref().ok_or_else(|| Error::Config("market mode needs --series".into()))?;
            let series = MarketSeries::read_csv(&read_text(series_path)?)?;
            let spec = match &a.calibration {
                Some(p) => load_model(p)?,
                None => cfg.model.clone(),
            };
            let daily = match &a.recalibrate_daily {
                Some(p) => {
                    let by_date = read_daily_params(p)?;
                    let v: Vec<ModelParams> = series
                        .dates
                        .iter()
                        .map(|d| by_date.get(d).copied().ok_or_else(|| Error::Gap(format!("no calibration for {d}"))))
                        .collect::<Result<_>>()?;
                    Some(v)
                }
                None => None,
            };
            let mut methods = cfg.hedge.methods.clone();
            if !methods.contains(&HedgeMethod::BlackScholesFixed) {
                methods.push(HedgeMethod::BlackScholesFixed);
            }
            let mut runs: Vec<HedgeRun> = vec![];
            for m in methods {
                let run = run_hedge_market(&series, &cfg.hedge.market, &spec.params, &kernel, &spec.z0, m, nets, daily.as_deref())?;
                write_csv(&dir.join(format!("pnl_{}.csv", m.as_str())), &cfg, |w| run.write_csv(w))?;
                println!("{:>3}: J_T/P0 = {:+.4}", m.as_str(), run.terminal() / run.p0);
                runs.push(run);
            }
            let side: Vec<_> = runs.iter().map(|r| json!({"method": r.method, "j_t": r.terminal(), "j_t_over_p0": r.terminal() / r.p0, "clamped": r.clamped})).collect();
            write_json(&dir.join("summary.json"), &cfg, json!({"dates": series.dates, "model": spec, "comparison": side, "runs": runs}))
        }
    }
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| Error::Config(format!("this report needs --{flag}")));
    let mut buf = vec![];
    match a.kind {
        ReportKind::Smile => {
            let model = read_surface(&need(&a.model, "model")?)?;
            let bid = a.bid.as_deref().map(read_surface).transpose()?;
            let ask = a.ask.as_deref().map(read_surface).transpose()?;
            write_smile_slices(&model, bid.as_ref(), ask.as_ref(), &mut buf)?;
        }
        ReportKind::Heatmap => {
            let model = read_surface(&need(&a.model, "model")?)?;
            let target = read_surface(&need(&a.target, "target")?)?;
            write_heatmap(&model, &target, &mut buf, true)?;
        }
        ReportKind::Rmse => write_rmse_series(&read_text(&need(&a.batch, "batch")?)?, &mut buf)?,
    }
    match a.out {
        Some(p) => fs::write(p, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}
