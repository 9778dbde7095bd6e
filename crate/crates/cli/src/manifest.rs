//! Per-command run manifest: configuration, inputs, outputs and timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub workers: Option<usize>,
    pub config: Value,
    pub precedence: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub artifacts: Vec<FileHash>,
    pub timings: Vec<Timing>,
}

pub fn hash_file(path: &Path) -> Result<FileHash, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileHash { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 })
}

/// Collects what a command read and wrote while it runs.
pub struct Recorder {
    manifest: RunManifest,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    clock: Instant,
}

impl Recorder {
    pub fn new(command: &str, workers: Option<usize>, config: Value, precedence: Value) -> Self {
        Recorder {
            manifest: RunManifest {
                schema_version: SCHEMA_VERSION,
                tool: env!("CARGO_PKG_NAME").to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv: std::env::args().collect(),
                workers,
                config,
                precedence,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                timings: Vec::new(),
            },
            inputs: Vec::new(),
            artifacts: Vec::new(),
            clock: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    /// Closes the current stage and starts timing the next.
    pub fn lap(&mut self, stage: &str) {
        self.manifest.timings.push(Timing { stage: stage.to_string(), seconds: self.clock.elapsed().as_secs_f64() });
        self.clock = Instant::now();
    }

    pub fn finish(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.inputs = self.inputs.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?;
        self.manifest.artifacts = self.artifacts.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
