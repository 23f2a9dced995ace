//! Synthetic training corpora `{ω, z0, IVS_SPX, IVS_VIX}`.
//!
//! A corpus directory holds `meta.jsonl` (a header line, then one line per split),
//! one fixed-width binary file per split and a sidecar of Monte Carlo vol
//! half-widths per split.
//!
//! Record layout, little-endian, 1104 bytes:
//!
//! ```text
//! offset    0  omega    5 × f64   (λ, η, a, b, c)
//! offset   40  z0      10 × f64
//! offset  120  ivs_spx 60 × f64   strike-major, NaN where dropped
//! offset  600  ivs_vix 60 × f64
//! offset 1080  seed    u64        reproduces the sample (parameters and paths)
//! offset 1088  mask    u128       bit i set: grid point i dropped (0..60 SPX, 60..120 VIX)
//! ```
//!
//! The sidecar `<split>.ci.bin` stores 120 f64 per record in the same order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::kernel::{build_kernel, KernelApprox, DEFAULT_ALPHA, DEFAULT_FACTORS, DEFAULT_MESH};
use crate::mc::SimConfig;
use crate::model::ModelParams;
use crate::pricing::{price_surfaces, AssetClass, SurfaceGrid, MATURITIES, SURFACE_POINTS, VIX_WINDOW};
use crate::provenance::{sha256_hex, Provenance};
use crate::rng::{derive_seed, stream};

pub const OMEGA_LO: [f64; 5] = [0.5, 1.0, 0.1, 0.01, 0.0001];
pub const OMEGA_HI: [f64; 5] = [2.5, 1.5, 0.6, 0.5, 0.03];
pub const Z0_BOUND: f64 = 0.5;
/// `ω` followed by `z0`.
pub const PARAM_DIM: usize = 5 + DEFAULT_FACTORS;
/// SPX surface followed by VIX surface.
pub const IVS_DIM: usize = 2 * SURFACE_POINTS;
pub const RECORD_BYTES: usize = 8 * (PARAM_DIM + IVS_DIM) + 8 + 16;
pub const DEFAULT_DATASET_DT: f64 = 0.0012;

/// Lower and upper corners of the `(ω, z0)` sampling box.
pub fn param_box() -> (Vec<f64>, Vec<f64>) {
    let mut lo = OMEGA_LO.to_vec();
    let mut hi = OMEGA_HI.to_vec();
    lo.extend([-Z0_BOUND; DEFAULT_FACTORS]);
    hi.extend([Z0_BOUND; DEFAULT_FACTORS]);
    (lo, hi)
}

/// Positions of one asset class inside the 120-long surface vector.
pub fn surface_range(class: AssetClass) -> Range<usize> {
    match class {
        AssetClass::Spx => 0..SURFACE_POINTS,
        AssetClass::Vix => SURFACE_POINTS..IVS_DIM,
    }
}

/// Independent uniform draws of `ω` and `z0` over the sampling boxes.
pub fn sample_parameters<R: Rng + ?Sized>(rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let omega = OMEGA_LO.iter().zip(&OMEGA_HI).map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
    let z0 = (0..DEFAULT_FACTORS).map(|_| Z0_BOUND * (2.0 * rng.random::<f64>() - 1.0)).collect();
    (omega, z0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub omega: Vec<f64>,
    pub z0: Vec<f64>,
    pub ivs_spx: Vec<f64>,
    pub ivs_vix: Vec<f64>,
    pub seed: u64,
    pub mask: u128,
}

impl SampleRecord {
    pub fn new(omega: Vec<f64>, z0: Vec<f64>, ivs_spx: Vec<f64>, ivs_vix: Vec<f64>, seed: u64) -> Result<Self> {
        let mut rec = SampleRecord { omega, z0, ivs_spx, ivs_vix, seed, mask: 0 };
        rec.check_shape()?;
        for (i, v) in rec.ivs_spx.iter().chain(&rec.ivs_vix).enumerate() {
            if !v.is_finite() {
                rec.mask |= 1u128 << i;
            }
        }
        Ok(rec)
    }

    fn check_shape(&self) -> Result<()> {
        check_len(5, self.omega.len())?;
        check_len(DEFAULT_FACTORS, self.z0.len())?;
        check_len(SURFACE_POINTS, self.ivs_spx.len())?;
        check_len(SURFACE_POINTS, self.ivs_vix.len())
    }

    /// Shape plus the sampling-box invariants.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        let (lo, hi) = param_box();
        for (i, x) in self.inputs().iter().enumerate() {
            if !(*x >= lo[i] && *x <= hi[i]) {
                return Err(Error::domain(format!("parameter {i} = {x} outside [{}, {}]", lo[i], hi[i])));
            }
        }
        Ok(())
    }

    pub fn params(&self, alpha: f64) -> Result<ModelParams> {
        ModelParams::from_omega(&self.omega, alpha)
    }

    /// `ω ++ z0`.
    pub fn inputs(&self) -> Vec<f64> {
        self.omega.iter().chain(&self.z0).copied().collect()
    }

    /// `IVS_SPX ++ IVS_VIX`.
    pub fn surfaces(&self) -> Vec<f64> {
        self.ivs_spx.iter().chain(&self.ivs_vix).copied().collect()
    }

    pub fn surface(&self, class: AssetClass) -> &[f64] {
        match class {
            AssetClass::Spx => &self.ivs_spx,
            AssetClass::Vix => &self.ivs_vix,
        }
    }

    pub fn is_valid(&self, point: usize) -> bool {
        self.mask & (1u128 << point) == 0
    }

    pub fn valid_fraction(&self) -> f64 {
        1.0 - self.mask.count_ones() as f64 / IVS_DIM as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_BYTES);
        for x in self.omega.iter().chain(&self.z0).chain(&self.ivs_spx).chain(&self.ivs_vix) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.mask.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != RECORD_BYTES {
            return Err(Error::format(format!("record is {} bytes, expected {RECORD_BYTES}", bytes.len())));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let vals: Vec<f64> = (0..PARAM_DIM + IVS_DIM).map(f).collect();
        let off = 8 * (PARAM_DIM + IVS_DIM);
        Ok(SampleRecord {
            omega: vals[..5].to_vec(),
            z0: vals[5..PARAM_DIM].to_vec(),
            ivs_spx: vals[PARAM_DIM..PARAM_DIM + SURFACE_POINTS].to_vec(),
            ivs_vix: vals[PARAM_DIM + SURFACE_POINTS..].to_vec(),
            seed: u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()),
            mask: u128::from_le_bytes(bytes[off + 8..off + 24].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    /// Splits `count` in the ratio 15 : 2 : 1.
    pub fn from_total(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::domain("corpus needs at least one sample"));
        }
        let validation = (count as f64 * 2.0 / 18.0).round() as usize;
        let test = (count as f64 / 18.0).round() as usize;
        let train = count - validation - test;
        Ok(SplitCounts { train, validation, test })
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    /// Global sample indices of a split (train, then validation, then test).
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Validation => self.train..self.train + self.validation,
            Split::Test => self.train + self.validation..self.total(),
        }
    }
}

/// A sample whose parameters are fixed instead of drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedSample {
    pub omega: Vec<f64>,
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub counts: SplitCounts,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub alpha: f64,
    pub factors: usize,
    pub mesh: f64,
    #[serde(default)]
    pub antithetic: bool,
    pub min_valid_fraction: f64,
    pub max_attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned: Option<PinnedSample>,
}

impl CorpusSpec {
    /// 2000 / 300 / 200 samples at 10,000 paths each.
    pub fn desk_scale(seed: u64) -> Self {
        CorpusSpec {
            counts: SplitCounts { train: 2000, validation: 300, test: 200 },
            paths: 10_000,
            dt: DEFAULT_DATASET_DT,
            seed,
            alpha: DEFAULT_ALPHA,
            factors: DEFAULT_FACTORS,
            mesh: DEFAULT_MESH,
            antithetic: false,
            min_valid_fraction: 0.9,
            max_attempts: 100,
            pinned: None,
        }
    }

    /// 150,000 / 20,000 / 10,000 samples at 50,000 paths each.
    pub fn paper_scale(seed: u64) -> Self {
        CorpusSpec {
            counts: SplitCounts { train: 150_000, validation: 20_000, test: 10_000 },
            paths: 50_000,
            ..Self::desk_scale(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.total() == 0 || self.paths == 0 || !(self.dt > 0.0) || self.max_attempts == 0 {
            return Err(Error::Config("corpus needs samples, paths, a positive step and attempts".into()));
        }
        if self.factors != DEFAULT_FACTORS {
            return Err(Error::Config(format!("corpus records are fixed at {DEFAULT_FACTORS} factors")));
        }
        if let Some(p) = &self.pinned {
            check_len(5, p.omega.len())?;
            check_len(DEFAULT_FACTORS, p.z0.len())?;
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelApprox> {
        build_kernel(self.alpha, self.factors, self.mesh)
    }

    pub fn horizon(&self) -> f64 {
        MATURITIES.iter().copied().fold(0.0, f64::max)
    }
}

/// Output of one sample: the record, its vol half-widths and the attempts used.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub record: SampleRecord,
    pub ci_half: Vec<f64>,
    pub attempts: usize,
}

/// Prices both surfaces for the parameters drawn from `seed` (or the pinned ones).
pub fn price_sample(spec: &CorpusSpec, kernel: &KernelApprox, seed: u64) -> Result<GeneratedSample> {
    let (omega, z0) = match &spec.pinned {
        Some(p) => (p.omega.clone(), p.z0.clone()),
        None => sample_parameters(&mut stream(seed, 0)),
    };
    let params = ModelParams::from_omega(&omega, spec.alpha)?;
    let mut cfg = SimConfig::with_step(spec.horizon(), spec.dt, spec.paths, derive_seed(seed, 1));
    cfg.antithetic = spec.antithetic;
    let (spx, vix) = price_surfaces(
        &params,
        kernel,
        &z0,
        &cfg,
        &SurfaceGrid::default_for(AssetClass::Spx),
        &SurfaceGrid::default_for(AssetClass::Vix),
    )?;
    let ci_half = spx.ci_half.clone().unwrap_or_default().into_iter().chain(vix.ci_half.clone().unwrap_or_default()).collect();
    let record = SampleRecord::new(omega, z0, spx.vols, vix.vols, seed)?;
    Ok(GeneratedSample { record, ci_half, attempts: 1 })
}

/// Sample `index` of the corpus, redrawn until enough grid points are valid.
pub fn generate_sample(spec: &CorpusSpec, kernel: &KernelApprox, index: usize) -> Result<GeneratedSample> {
    let base = derive_seed(spec.seed, index as u64);
    for attempt in 0..spec.max_attempts {
        let seed = derive_seed(base, attempt as u64);
        match price_sample(spec, kernel, seed) {
            Ok(mut s) => {
                if s.record.valid_fraction() >= spec.min_valid_fraction || spec.pinned.is_some() {
                    s.attempts = attempt + 1;
                    return Ok(s);
                }
            }
            Err(e) if spec.pinned.is_some() => return Err(e),
            Err(e) => log::debug!("sample {index} attempt {attempt}: {e}"),
        }
    }
    Err(Error::Convergence(format!("sample {index}: no valid draw in {} attempts", spec.max_attempts)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub kind: String,
    pub split: Split,
    pub count: usize,
    pub file: String,
    pub sha256: String,
    pub ci_file: String,
    pub ci_sha256: String,
    /// Samples that needed more than one draw.
    pub redrawn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub kind: String,
    pub format: String,
    pub record_bytes: usize,
    pub layout: String,
    pub ci_layout: String,
    pub spec: CorpusSpec,
    pub kernel: KernelApprox,
    pub spx_grid: SurfaceGrid,
    pub vix_grid: SurfaceGrid,
    pub vix_moneyness: String,
    pub vix_window: f64,
    pub provenance: Provenance,
}

impl CorpusHeader {
    pub fn new(spec: &CorpusSpec, kernel: &KernelApprox) -> Self {
        CorpusHeader {
            kind: "header".into(),
            format: "qrheston-corpus-1".into(),
            record_bytes: RECORD_BYTES,
            layout: "omega[5] z0[10] ivs_spx[60] ivs_vix[60] f64 LE, seed u64 LE, mask u128 LE (bit set = dropped; \
                     0..60 SPX, 60..120 VIX); surfaces strike-major"
                .into(),
            ci_layout: "120 f64 LE per record: 95% MC half-width of each vol, NaN where dropped".into(),
            spec: spec.clone(),
            kernel: kernel.clone(),
            spx_grid: SurfaceGrid::default_for(AssetClass::Spx),
            vix_grid: SurfaceGrid::default_for(AssetClass::Vix),
            vix_moneyness: "log(K/F) with F the model VIX futures E[VIX_T]".into(),
            vix_window: VIX_WINDOW,
            provenance: Provenance::new(spec, spec.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dir: PathBuf,
    pub header: CorpusHeader,
    pub splits: Vec<SplitEntry>,
}

const BLOCK: usize = 32;

struct SplitWriter {
    records: BufWriter<File>,
    ci: BufWriter<File>,
    hash: Sha256,
    ci_hash: Sha256,
    redrawn: usize,
}

/// Generates every split into `out` and writes `meta.jsonl` last.
pub fn generate_corpus(spec: &CorpusSpec, out: &Path) -> Result<Corpus> {
    spec.validate()?;
    let kernel = spec.kernel()?;
    std::fs::create_dir_all(out)?;
    let header = CorpusHeader::new(spec, &kernel);
    let mut splits = Vec::new();
    for split in Split::ALL {
        let file = format!("{}.bin", split.name());
        let ci_file = format!("{}.ci.bin", split.name());
        let mut w = SplitWriter {
            records: BufWriter::new(File::create(out.join(&file))?),
            ci: BufWriter::new(File::create(out.join(&ci_file))?),
            hash: Sha256::new(),
            ci_hash: Sha256::new(),
            redrawn: 0,
        };
        let range = spec.counts.range(split);
        let indices: Vec<usize> = range.clone().collect();
        for block in indices.chunks(BLOCK) {
            let done: Vec<Result<GeneratedSample>> =
                block.par_iter().map(|&i| generate_sample(spec, &kernel, i)).collect();
            for s in done {
                let s = s?;
                let bytes = s.record.to_bytes();
                w.hash.update(&bytes);
                w.records.write_all(&bytes)?;
                let ci: Vec<u8> = s.ci_half.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.ci_hash.update(&ci);
                w.ci.write_all(&ci)?;
                w.redrawn += (s.attempts > 1) as usize;
            }
            log::info!("{}: {}/{} samples", split.name(), block.last().map_or(0, |i| i + 1 - range.start), range.len());
        }
        w.records.flush()?;
        w.ci.flush()?;
        splits.push(SplitEntry {
            kind: "split".into(),
            split,
            count: range.len(),
            file,
            sha256: hex::encode(w.hash.finalize()),
            ci_file,
            ci_sha256: hex::encode(w.ci_hash.finalize()),
            redrawn: w.redrawn,
        });
    }
    let mut meta = BufWriter::new(File::create(out.join("meta.jsonl"))?);
    writeln!(meta, "{}", serde_json::to_string(&header)?)?;
    for s in &splits {
        writeln!(meta, "{}", serde_json::to_string(s)?)?;
    }
    meta.flush()?;
    Ok(Corpus { dir: out.to_path_buf(), header, splits })
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Corpus> {
        let meta = BufReader::new(File::open(dir.join("meta.jsonl"))?);
        let mut lines = meta.lines();
        let first = lines.next().ok_or_else(|| Error::format("empty corpus metadata"))??;
        let header: CorpusHeader = serde_json::from_str(&first)?;
        if header.record_bytes != RECORD_BYTES {
            return Err(Error::format(format!("corpus records are {} bytes, expected {RECORD_BYTES}", header.record_bytes)));
        }
        let mut splits = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                splits.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Corpus { dir: dir.to_path_buf(), header, splits })
    }

    pub fn entry(&self, split: Split) -> Result<&SplitEntry> {
        self.splits
            .iter()
            .find(|s| s.split == split)
            .ok_or_else(|| Error::format(format!("corpus has no {} split", split.name())))
    }

    fn read_checked(&self, file: &str, sha: &str) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        File::open(self.dir.join(file))?.read_to_end(&mut bytes)?;
        if sha256_hex(&bytes) != sha {
            return Err(Error::format(format!("{file}: checksum mismatch")));
        }
        Ok(bytes)
    }

    pub fn load(&self, split: Split) -> Result<Vec<SampleRecord>> {
        let entry = self.entry(split)?;
        let bytes = self.read_checked(&entry.file, &entry.sha256)?;
        if bytes.len() != entry.count * RECORD_BYTES {
            return Err(Error::format(format!("{}: truncated", entry.file)));
        }
        bytes.chunks(RECORD_BYTES).map(SampleRecord::from_bytes).collect()
    }

    /// Vol half-widths, one 120-vector per record.
    pub fn load_ci(&self, split: Split) -> Result<Vec<Vec<f64>>> {
        let entry = self.entry(split)?;
        let bytes = self.read_checked(&entry.ci_file, &entry.ci_sha256)?;
        if bytes.len() != entry.count * IVS_DIM * 8 {
            return Err(Error::format(format!("{}: truncated", entry.ci_file)));
        }
        Ok(bytes
            .chunks(IVS_DIM * 8)
            .map(|r| r.chunks(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
            .collect())
    }
}

/// One row per record: `seed,lambda,eta,a,b,c,z0_1..z0_10,spx_0..spx_59,vix_0..vix_59,mask`.
pub fn export_csv<W: Write>(records: &[SampleRecord], mut w: W) -> Result<()> {
    let mut head = vec!["seed".to_string()];
    head.extend(["lambda", "eta", "a", "b", "c"].map(String::from));
    head.extend((1..=DEFAULT_FACTORS).map(|i| format!("z0_{i}")));
    head.extend((0..SURFACE_POINTS).map(|i| format!("spx_{i}")));
    head.extend((0..SURFACE_POINTS).map(|i| format!("vix_{i}")));
    head.push("mask".into());
    writeln!(w, "{}", head.join(","))?;
    for r in records {
        let mut row = vec![r.seed.to_string()];
        row.extend(r.inputs().iter().map(|x| x.to_string()));
        row.extend(r.surfaces().iter().map(|x| if x.is_finite() { x.to_string() } else { String::new() }));
        row.push(format!("{:032x}", r.mask));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Affine parameter maps to `[-1, 1]` and per-point surface z-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub param_lo: Vec<f64>,
    pub param_hi: Vec<f64>,
    pub ivs_mean: Vec<f64>,
    pub ivs_std: Vec<f64>,
    /// SHA-256 of the training records the statistics were fitted on.
    pub train_hash: String,
}

/// Fits the surface statistics on the training split only; dropped points are skipped.
pub fn fit_normalization(train: &[SampleRecord]) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::domain("normalisation needs a nonempty training split"));
    }
    let mut hasher = Sha256::new();
    let mut sum = vec![0.0; IVS_DIM];
    let mut count = vec![0usize; IVS_DIM];
    for r in train {
        hasher.update(r.to_bytes());
        for (i, v) in r.surfaces().iter().enumerate() {
            if v.is_finite() {
                sum[i] += v;
                count[i] += 1;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut sq = vec![0.0; IVS_DIM];
    for r in train {
        for (i, v) in r.surfaces().iter().enumerate() {
            if v.is_finite() {
                sq[i] += (v - mean[i]).powi(2);
            }
        }
    }
    let std: Vec<f64> = sq.iter().zip(&count).map(|(s, &c)| (s / c as f64).sqrt()).collect();
    if let Some(i) = (0..IVS_DIM).find(|&i| count[i] < 2 || !(std[i] > 0.0)) {
        return Err(Error::Numerical(format!("grid point {i} has degenerate spread in the training split")));
    }
    let (param_lo, param_hi) = param_box();
    Ok(NormalizationStats { param_lo, param_hi, ivs_mean: mean, ivs_std: std, train_hash: hex::encode(hasher.finalize()) })
}

impl NormalizationStats {
    pub fn normalize_params(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (v - self.param_lo[i]) / (self.param_hi[i] - self.param_lo[i]) - 1.0)
            .collect()
    }

    pub fn denormalize_params(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.param_lo[i] + 0.5 * (v + 1.0) * (self.param_hi[i] - self.param_lo[i]))
            .collect()
    }

    /// z-scores a slice of the surface vector starting at `offset` (0 for SPX, 60 for VIX).
    pub fn normalize_ivs(&self, ivs: &[f64], offset: usize) -> Vec<f64> {
        ivs.iter().enumerate().map(|(i, v)| (v - self.ivs_mean[offset + i]) / self.ivs_std[offset + i]).collect()
    }

    pub fn denormalize_ivs(&self, z: &[f64], offset: usize) -> Vec<f64> {
        z.iter().enumerate().map(|(i, v)| v * self.ivs_std[offset + i] + self.ivs_mean[offset + i]).collect()
    }

    /// `∂(vol)/∂(normalised output)` per point.
    pub fn ivs_scale(&self, offset: usize, len: usize) -> &[f64] {
        &self.ivs_std[offset..offset + len]
    }

    /// `∂(normalised input)/∂(raw parameter)` per coordinate.
    pub fn param_scale(&self) -> Vec<f64> {
        self.param_lo.iter().zip(&self.param_hi).map(|(lo, hi)| 2.0 / (hi - lo)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seed: u64) -> SampleRecord {
        let (omega, z0) = sample_parameters(&mut stream(seed, 0));
        let spx: Vec<f64> = (0..60).map(|i| 0.1 + 0.001 * i as f64 + 0.01 * (seed % 7) as f64).collect();
        let mut vix: Vec<f64> = (0..60).map(|i| 0.8 + 0.002 * i as f64 + 0.03 * (seed % 5) as f64).collect();
        if seed % 4 == 3 {
            vix[3] = f64::NAN;
        }
        SampleRecord::new(omega, z0, spx, vix, seed).unwrap()
    }

    #[test]
    fn draws_cover_the_box() {
        let mut rng = stream(99, 0);
        let (lo, hi) = param_box();
        let n = 100_000;
        let mut mins = vec![f64::INFINITY; PARAM_DIM];
        let mut maxs = vec![f64::NEG_INFINITY; PARAM_DIM];
        let mut sums = vec![0.0; PARAM_DIM];
        for _ in 0..n {
            let (o, z) = sample_parameters(&mut rng);
            for (i, x) in o.iter().chain(&z).enumerate() {
                mins[i] = mins[i].min(*x);
                maxs[i] = maxs[i].max(*x);
                sums[i] += x;
            }
        }
        for i in 0..PARAM_DIM {
            assert!(mins[i] >= lo[i] && maxs[i] <= hi[i]);
            let width = hi[i] - lo[i];
            let sd = width / 12f64.sqrt() / (n as f64).sqrt();
            assert!((sums[i] / n as f64 - 0.5 * (lo[i] + hi[i])).abs() < 3.0 * sd, "coordinate {i}");
        }
        let a: Vec<_> = (0..5).map(|_| sample_parameters(&mut stream(5, 0))).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn record_bytes_round_trip() {
        let r = record(3);
        assert_eq!(r.mask, 1u128 << 63);
        let bytes = r.to_bytes();
        assert_eq!(bytes.len(), RECORD_BYTES);
        assert_eq!(RECORD_BYTES, 1104);
        let back = SampleRecord::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.inputs().len() + back.surfaces().len(), 135);
        assert!(!back.is_valid(63) && back.is_valid(0));
        r.validate().unwrap();
        assert!(SampleRecord::from_bytes(&bytes[1..]).is_err());
    }

    #[test]
    fn split_counts() {
        let c = SplitCounts::from_total(180).unwrap();
        assert_eq!((c.train, c.validation, c.test), (150, 20, 10));
        assert_eq!(c.range(Split::Test), 170..180);
        let one = SplitCounts::from_total(1).unwrap();
        assert_eq!(one.total(), 1);
        assert!(SplitCounts::from_total(0).is_err());
    }

    #[test]
    fn paper_scale_header_echoes_counts() {
        let spec = CorpusSpec::paper_scale(1);
        let header = CorpusHeader::new(&spec, &spec.kernel().unwrap());
        let json = serde_json::to_value(&header).unwrap();
        assert_eq!(json["spec"]["counts"]["train"], 150_000);
        assert_eq!(json["spec"]["counts"]["validation"], 20_000);
        assert_eq!(json["spec"]["counts"]["test"], 10_000);
        assert_eq!(json["spec"]["dt"], 0.0012);
    }

    #[test]
    fn normalisation_definition_and_round_trip() {
        let train: Vec<_> = (0..50).map(record).collect();
        let stats = fit_normalization(&train).unwrap();
        let (lo, hi) = param_box();
        assert!(stats.normalize_params(&lo).iter().all(|&u| u == -1.0));
        assert!(stats.normalize_params(&hi).iter().all(|&u| (u - 1.0).abs() < 1e-15));
        for i in [0usize, 10, 70] {
            let z: Vec<f64> = train.iter().map(|r| stats.normalize_ivs(&r.surfaces(), 0)[i]).collect();
            let m = z.iter().sum::<f64>() / z.len() as f64;
            let s = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
        let single = vec![record(1); 3];
        assert!(fit_normalization(&single).is_err());
        assert!(fit_normalization(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalisation_inverts(seed in 0u64..1000, scale in 0.5f64..2.0) {
            let train: Vec<_> = (0..10).map(record).collect();
            let stats = fit_normalization(&train).unwrap();
            let r = record(seed);
            let x = r.inputs();
            let back = stats.denormalize_params(&stats.normalize_params(&x));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3));
            }
            let ivs: Vec<f64> = r.surfaces().iter().map(|v| v * scale).collect();
            let back = stats.denormalize_ivs(&stats.normalize_ivs(&ivs, 0), 0);
            for (a, b) in ivs.iter().zip(&back).filter(|(a, _)| a.is_finite()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }
    }
}
