//! Run configuration: one TOML file, every field defaulted, command-line flags applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::dataset::{CorpusSpec, SplitCounts, DEFAULT_DATASET_DT};
use crate::error::{Error, Result};
use crate::hedging::{DmlSampling, HedgeMethod, MarketSetup, SyntheticSetup};
use crate::kernel::{DEFAULT_ALPHA, DEFAULT_FACTORS, DEFAULT_FIT_HORIZON, DEFAULT_MESH};
use crate::model::{hedging_reference, ModelSpec};
use crate::nn::{Arch, TrainConfig};
use crate::provenance::Provenance;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub alpha: f64,
    pub n: usize,
    /// `None` searches for the optimal mesh.
    pub mesh: Option<f64>,
    pub horizon: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { alpha: DEFAULT_ALPHA, n: DEFAULT_FACTORS, mesh: Some(DEFAULT_MESH), horizon: DEFAULT_FIT_HORIZON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub paths: usize,
    pub horizon: f64,
    pub s0: f64,
    pub antithetic: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { dt: DEFAULT_DATASET_DT, paths: 10_000, horizon: 0.09, s0: 1.0, antithetic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub paths: usize,
    pub dt: f64,
    pub antithetic: bool,
    pub min_valid_fraction: f64,
    pub max_attempts: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = CorpusSpec::desk_scale(0);
        DatasetSection {
            train: d.counts.train,
            validation: d.counts.validation,
            test: d.counts.test,
            paths: d.paths,
            dt: d.dt,
            antithetic: d.antithetic,
            min_valid_fraction: d.min_valid_fraction,
            max_attempts: d.max_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub ptm: TrainConfig,
    pub mtp_spx: TrainConfig,
    pub mtp_vix: TrainConfig,
    pub dml: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl TrainSection {
    pub fn desk_scale() -> Self {
        TrainSection {
            ptm: TrainConfig::desk_scale(Arch::Ptm),
            mtp_spx: TrainConfig::desk_scale(Arch::MtpSpx),
            mtp_vix: TrainConfig::desk_scale(Arch::MtpVix),
            dml: TrainConfig::desk_scale(Arch::Dml),
        }
    }

    /// The published schedule, meant for the paper-scale corpus.
    pub fn paper_scale() -> Self {
        TrainSection {
            ptm: TrainConfig::for_arch(Arch::Ptm),
            mtp_spx: TrainConfig::for_arch(Arch::MtpSpx),
            mtp_vix: TrainConfig::for_arch(Arch::MtpVix),
            dml: TrainConfig::for_arch(Arch::Dml),
        }
    }

    pub fn get(&self, arch: Arch) -> TrainConfig {
        match arch {
            Arch::Ptm => self.ptm.clone(),
            Arch::MtpSpx => self.mtp_spx.clone(),
            Arch::MtpVix => self.mtp_vix.clone(),
            Arch::Dml => self.dml.clone(),
            Arch::Custom => TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HedgeSection {
    pub synthetic: SyntheticSetup,
    pub rebalance_dts: Vec<f64>,
    pub methods: Vec<HedgeMethod>,
    pub dml: DmlSampling,
    pub market: MarketSetup,
    pub recalibrate_daily: bool,
    pub histogram_bins: usize,
}

impl Default for HedgeSection {
    fn default() -> Self {
        HedgeSection {
            synthetic: SyntheticSetup::default(),
            rebalance_dts: vec![0.0012, 0.0036],
            methods: vec![HedgeMethod::Mtp, HedgeMethod::Dml, HedgeMethod::BlackScholesFixed],
            dml: DmlSampling::default(),
            market: MarketSetup::default(),
            recalibrate_daily: false,
            histogram_bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: PathBuf,
    pub corpus: PathBuf,
    pub networks: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { out_dir: "out".into(), corpus: "corpus".into(), networks: "networks".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage's seed is derived from it.
    pub seed: u64,
    pub kernel: KernelSection,
    pub model: ModelSpec,
    pub sim: SimSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub calib: CalibrationConfig,
    pub hedge: HedgeSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            kernel: KernelSection::default(),
            model: hedging_reference(),
            sim: SimSection::default(),
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            calib: CalibrationConfig::default(),
            hedge: HedgeSection::default(),
            io: IoSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Overwrites the per-stage seeds with values derived from the master seed.
    pub fn resolved(mut self) -> Self {
        let s = self.seed;
        self.train.ptm.seed = derive_seed(s, 11);
        self.train.mtp_spx.seed = derive_seed(s, 12);
        self.train.mtp_vix.seed = derive_seed(s, 13);
        self.train.dml.seed = derive_seed(s, 14);
        self.hedge.synthetic.seed = s;
        self.hedge.dml.seed = derive_seed(s, 21);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        let d = &self.dataset;
        CorpusSpec {
            counts: SplitCounts { train: d.train, validation: d.validation, test: d.test },
            paths: d.paths,
            dt: d.dt,
            seed: self.seed,
            alpha: self.kernel.alpha,
            factors: self.kernel.n,
            mesh: self.kernel.mesh.unwrap_or(DEFAULT_MESH),
            antithetic: d.antithetic,
            min_valid_fraction: d.min_valid_fraction,
            max_attempts: d.max_attempts,
            pinned: None,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default().resolved();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.kernel.alpha, 0.51);
        assert_eq!(cfg.kernel.n, 10);
        assert_eq!(cfg.hedge.synthetic.strike, 98.0);
        assert_eq!(cfg.hedge.rebalance_dts, vec![0.0012, 0.0036]);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[sim]\npaths = 500\n[hedge.synthetic]\nstrike = 95.0\n").unwrap();
        assert_eq!(cfg.sim.paths, 500);
        assert_eq!(cfg.sim.dt, 0.0012);
        assert_eq!(cfg.hedge.synthetic.strike, 95.0);
        assert_eq!(cfg.hedge.synthetic.seed, 7);
        assert_eq!(cfg.train.dml.epochs, 20);
        assert!(matches!(RunConfig::from_toml("[sim]\npath = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_follow_the_master_seed() {
        let a = RunConfig::default().with_seed(1);
        let b = RunConfig::default().with_seed(2);
        assert_ne!(a.train.mtp_spx.seed, b.train.mtp_spx.seed);
        assert_eq!(a, RunConfig::default().with_seed(1));
        assert_ne!(a.provenance().config_hash, b.provenance().config_hash);
    }
}
