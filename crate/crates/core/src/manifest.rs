//! One JSON manifest per command invocation: what ran, on which inputs,
//! with which configuration, and which files it produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Resolved configuration of every run, in execution order.
    pub configs: Vec<TrainConfig>,
    pub seed: Option<u64>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// SHA-256 over everything above except the timestamps.
    pub checksum: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Digest of a CSV with its last column removed. Used for training logs,
/// whose trailing wall-clock column is the only non-reproducible part.
pub fn digest_without_last_column(text: &str) -> String {
    let stripped: String = text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .flat_map(|l| [l, "\n"])
        .collect();
    sha256_hex(stripped.as_bytes())
}

impl RunManifest {
    pub fn begin(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            configs: Vec::new(),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            checksum: String::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Records an output under `name` (a path relative to the output root).
    pub fn add_output(&mut self, name: &str, digest: String) {
        self.outputs.insert(name.to_string(), digest);
    }

    pub fn compute_checksum(&self) -> String {
        let mut stable = self.clone();
        stable.started_unix = 0.0;
        stable.finished_unix = 0.0;
        stable.checksum.clear();
        sha256_hex(&serde_json::to_vec(&stable).expect("manifest serialises"))
    }

    /// Stamps the end time and checksum, then writes `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix = unix_now();
        self.checksum = self.compute_checksum();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}
