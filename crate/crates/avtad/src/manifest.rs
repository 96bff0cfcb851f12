//! Run manifests: what is needed to reproduce an output directory.

use std::path::Path;

use avtad_core::config::RunConfig;
use serde::{Deserialize, Serialize};

use crate::cfgfile::config_hash;
use crate::dataset::write_atomic;
use crate::error::Result;

pub const MANIFEST: &str = "manifest.json";

/// `git describe`-style version of this build.
pub const VERSION: &str = env!("AVTAD_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub data_seed: u64,
    pub config_sha256: String,
    /// Canonical configuration text; its hash is `config_sha256`.
    pub config: String,
    pub inputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            seed: cfg.seed,
            data_seed: cfg.synth.seed,
            config_sha256: config_hash(cfg),
            config: cfg.to_canonical_text(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(self).expect("plain data serialises"))
    }
}
