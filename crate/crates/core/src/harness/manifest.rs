//! Run manifests: what was run, with which settings, and checksums of every
//! file it produced.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    /// Full TOML of the effective configuration, if any.
    pub config: Option<String>,
    /// Output file (relative to the run directory) to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Option<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            outputs: BTreeMap::new(),
        }
    }

    /// Hashes `rel` under `dir` and records it.
    pub fn add_output(&mut self, dir: &Path, rel: &str) -> Result<(), HarnessError> {
        let path = dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::io(&path, e))
    }

    /// Outputs that are missing or no longer match their checksum.
    pub fn stale_outputs(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|(rel, sum)| match std::fs::read(dir.join(rel)) {
                Ok(bytes) => sha256_hex(&bytes) != **sum,
                Err(_) => true,
            })
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let mut m = RunManifest::new("eval-battery", 4, Some("[experiment]\n".into()));
        m.add_output(dir.path(), "a.csv").unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.stale_outputs(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.csv"), "changed").unwrap();
        assert_eq!(back.stale_outputs(dir.path()), vec!["a.csv".to_string()]);
    }
}
