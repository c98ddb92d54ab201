//! Run manifest: written when a run starts and finalized when it ends.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::estimates::Assertion;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Passed,
    Failed,
    Error,
}

/// How replicate random streams derive from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub derivation: String,
    /// Stream index of each replicate, in replicate order.
    pub replicate_streams: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub status: RunStatus,
    pub code_version: String,
    pub config: serde_json::Value,
    pub seeds: SeedRecord,
    pub workers: usize,
    pub wall_time_secs: Option<f64>,
    /// SHA-256 of every emitted file, keyed by its path relative to the
    /// output directory (or absolute, for path dumps elsewhere).
    pub files: BTreeMap<String, String>,
    pub assertions: Vec<Assertion>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn start(cfg: &ExperimentConfig, workers: usize) -> Self {
        let replicates = if cfg.kind.holds_paths() { cfg.run.replicates as u64 } else { 0 };
        Self {
            schema_version: MANIFEST_SCHEMA,
            status: RunStatus::Running,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            seeds: SeedRecord {
                master: cfg.run.seed,
                derivation: "ChaCha8 keyed by the master seed; replicate r draws from stream r".into(),
                replicate_streams: (0..replicates).collect(),
            },
            workers,
            wall_time_secs: None,
            files: BTreeMap::new(),
            assertions: Vec::new(),
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }

    pub fn read(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
