use std::collections::BTreeMap;

use riskfilter_core::model::TimeGrid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Written next to the artifacts of every run. Contains nothing that varies
/// between identical invocations, so equal manifests mean equal outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub grid: TimeGrid,
    pub config_hash: String,
    /// Relative path to SHA-256.
    pub artifact_hashes: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, grid: TimeGrid, canonical_config: &str) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            grid,
            config_hash: sha256_hex(canonical_config.as_bytes()),
            artifact_hashes: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, relative: &str, bytes: &[u8]) {
        self.artifact_hashes.insert(relative.to_string(), sha256_hex(bytes));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
