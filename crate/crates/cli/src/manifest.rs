//! Reproducibility manifests: what ran, with which config, and the digest of
//! every artifact it wrote.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiments::Check;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    /// `passed` or `failed`.
    pub status: String,
    pub artifacts: Vec<ArtifactEntry>,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    /// Solver iteration counts by stage.
    pub iterations: BTreeMap<String, u64>,
    /// Seconds by stage, plus `total`.
    pub wall_times: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    /// `path -> sha256` for every artifact.
    pub fn digests(&self) -> BTreeMap<&str, &str> {
        self.artifacts.iter().map(|a| (a.path.as_str(), a.sha256.as_str())).collect()
    }

    /// Artifacts whose digest differs from `other`, or that only one side
    /// lists.
    pub fn digest_mismatches(&self, other: &Manifest) -> Vec<String> {
        let (a, b) = (self.digests(), other.digests());
        let mut out: Vec<String> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.to_string()).collect();
        out.extend(b.keys().filter(|k| !a.contains_key(*k)).map(|k| k.to_string()));
        out
    }
}
