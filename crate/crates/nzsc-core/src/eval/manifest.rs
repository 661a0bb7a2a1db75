//! Run manifests: what was run, with which resolved configuration, and
//! where the outputs went. Written atomically at run end.

use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Vec<PathBuf>,
    /// The fully resolved configuration the run used.
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn begin(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self {
            config_hash: format!("{:016x}", fnv1a64(cfg.to_toml().as_bytes())),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            checkpoints: Vec::new(),
            metrics: Vec::new(),
            config: cfg.clone(),
        }
    }

    pub fn finish(&mut self, path: &Path) -> std::io::Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        super::export::write_atomic(path, text.as_bytes())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
