//! Versioned run reports. Two runs of the same command, config, and seed
//! must produce byte-identical report files, so anything wall-clock-ish
//! stays out of the serialized form.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REPORT_VERSION: u32 = 1;
/// Reports land here when set; otherwise next to the invocation.
pub const REPORT_DIR_ENV: &str = "CTLAB_REPORT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    /// Hash of the scenario configuration the run was driven by.
    pub scenario_hash: String,
    pub results: serde_json::Value,
}

impl RunReport {
    pub fn new(
        command: impl Into<String>,
        seed: u64,
        scenario_hash: String,
        results: serde_json::Value,
    ) -> Self {
        Self { version: REPORT_VERSION, command: command.into(), seed, scenario_hash, results }
    }

    /// Canonical bytes: pretty JSON with a trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn file_name(&self) -> String {
        format!("{}-{}.json", self.command, self.seed)
    }

    /// Writes the report under `CTLAB_REPORT_DIR` (or `fallback_dir`) and
    /// returns the path.
    pub fn write(&self, fallback_dir: &Path) -> std::io::Result<PathBuf> {
        let dir = std::env::var_os(REPORT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| fallback_dir.to_path_buf());
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(self.file_name());
        let mut f = std::fs::File::create(&path)?;
        f.write_all(&self.to_bytes())?;
        Ok(path)
    }
}

/// Stable hash of any serializable scenario configuration.
pub fn scenario_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&json);
    hex::encode(&h.finalize()[..16])
}
