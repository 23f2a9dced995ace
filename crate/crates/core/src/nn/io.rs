//! `.qrhn` files: `QRHN`, a little-endian `u32` manifest length, the JSON manifest,
//! then every parameter as a little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::{Arch, MlpNetwork, Scaling};
use crate::error::{Error, Result};
use crate::provenance::Provenance;

pub const QRHN_MAGIC: &[u8; 4] = b"QRHN";
const FORMAT: &str = "qrhn/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub format: String,
    pub arch: Arch,
    pub dims: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub param_count: usize,
    pub scaling: Scaling,
    pub norm_stats_hash: String,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub best_val_loss: Option<f64>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl NetworkManifest {
    pub fn describe(net: &MlpNetwork) -> Self {
        NetworkManifest {
            format: FORMAT.into(),
            arch: net.arch,
            dims: net.dims.clone(),
            hidden_activation: "silu".into(),
            output_activation: "identity".into(),
            param_count: net.param_count(),
            scaling: net.scaling.clone(),
            norm_stats_hash: net.norm_hash.clone(),
            train: None,
            best_epoch: None,
            best_val_loss: None,
            provenance: None,
        }
    }
}

impl MlpNetwork {
    /// Serialises with the given manifest; its network description is refreshed from `self`.
    pub fn to_bytes(&self, manifest: &NetworkManifest) -> Result<Vec<u8>> {
        let mut m = manifest.clone();
        let own = NetworkManifest::describe(self);
        m.format = own.format;
        m.arch = own.arch;
        m.dims = own.dims;
        m.hidden_activation = own.hidden_activation;
        m.output_activation = own.output_activation;
        m.param_count = own.param_count;
        m.scaling = own.scaling;
        m.norm_stats_hash = own.norm_stats_hash;
        let json = serde_json::to_vec(&m)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::format("manifest too large"))?;
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.params.len());
        out.extend_from_slice(QRHN_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(MlpNetwork, NetworkManifest)> {
        if bytes.len() < 8 || &bytes[..4] != QRHN_MAGIC {
            return Err(Error::format("not a network file"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(8..8 + len).ok_or_else(|| Error::format("truncated manifest"))?;
        let manifest: NetworkManifest = serde_json::from_slice(body)?;
        if manifest.format != FORMAT {
            return Err(Error::format(format!("unsupported network format '{}'", manifest.format)));
        }
        if manifest.hidden_activation != "silu" || manifest.output_activation != "identity" {
            return Err(Error::format("only SiLU hidden layers with a linear output are supported"));
        }
        let blob = &bytes[8 + len..];
        if blob.len() != 8 * manifest.param_count {
            return Err(Error::format(format!("expected {} weights, found {} bytes", manifest.param_count, blob.len())));
        }
        let params: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let net = MlpNetwork::from_parts(
            manifest.arch,
            manifest.dims.clone(),
            params,
            manifest.scaling.clone(),
            manifest.norm_stats_hash.clone(),
        )?;
        Ok((net, manifest))
    }
}

pub fn save_network(path: &Path, net: &MlpNetwork, manifest: &NetworkManifest) -> Result<()> {
    fs::write(path, net.to_bytes(manifest)?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(MlpNetwork, NetworkManifest)> {
    MlpNetwork::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_outputs() {
        let mut net = MlpNetwork::new(Arch::Dml, Scaling::identity(11, 5), 3).unwrap();
        net.scaling.in_center[0] = 100.0;
        net.scaling.in_scale[0] = 0.1;
        net.scaling.out_scale = vec![2.5; 5];
        net.norm_hash = "abc".into();
        let mut manifest = NetworkManifest::describe(&net);
        manifest.train = Some(TrainConfig::for_arch(Arch::Dml));
        manifest.best_epoch = Some(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dml.qrhn");
        save_network(&path, &net, &manifest).unwrap();
        let (back, m) = load_network(&path).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back, net);
        let x: Vec<f64> = (0..11).map(|i| 95.0 + i as f64 * 0.37).collect();
        let (a, b) = (net.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)));
    }

    #[test]
    fn rejects_corruption() {
        let net = MlpNetwork::with_dims(&[2, 3, 1], 0).unwrap();
        let bytes = net.to_bytes(&NetworkManifest::describe(&net)).unwrap();
        assert!(MlpNetwork::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpNetwork::from_bytes(&bad).is_err());
        assert!(MlpNetwork::from_bytes(&bytes).is_ok());
    }
}
