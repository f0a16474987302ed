//! Run manifest: the effective config, fingerprints, timing, and the list of
//! produced files, written atomically at the end of a run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use crate::config::{write_atomic, RunConfig};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub graph_fingerprint: String,
    pub config: serde_json::Value,
    pub overrides: Vec<String>,
    pub started_at: String,
    pub ended_at: String,
    pub wall_ms: u128,
    pub produced_files: Vec<String>,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_at: String,
    produced: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            started_at: chrono::Utc::now().to_rfc3339(),
            produced: Vec::new(),
        }
    }

    pub fn add_file(&mut self, path: &Path) {
        self.produced.push(path.to_path_buf());
    }

    /// Finalizes and writes the manifest; the manifest itself is listed as a
    /// produced file.
    pub fn write(mut self, cfg: &RunConfig, fingerprint_hex: &str, path: &Path) -> Result<()> {
        self.produced.push(path.to_path_buf());
        let manifest = RunManifest {
            command: self.command,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            graph_fingerprint: fingerprint_hex.to_string(),
            config: serde_json::to_value(cfg)?,
            overrides: cfg.overrides.clone(),
            started_at: self.started_at,
            ended_at: chrono::Utc::now().to_rfc3339(),
            wall_ms: self.started.elapsed().as_millis(),
            produced_files: self
                .produced
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        write_atomic(path, &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}
