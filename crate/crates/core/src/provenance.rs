//! Provenance stamped into every artifact. No timestamps, so reruns are byte-identical.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the configuration that produced the artifact.
    pub config_hash: String,
}

impl Provenance {
    pub fn new<T: Serialize>(config: &T, seed: u64) -> Self {
        let json = serde_json::to_vec(config).unwrap_or_default();
        Provenance { tool: "qrheston".into(), version: VERSION.into(), seed, config_hash: sha256_hex(&json) }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
