// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use covforge_core::artifact::{hash_file, write_atomic};
use covforge_core::seeds::fingerprint;
use covforge_core::simbridge::BudgetSnapshot;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command_line: Vec<String>,
    pub config_fingerprint: String,
    pub seed: Option<u64>,
    pub budget: Option<BudgetSnapshot>,
    pub truncated: bool,
    pub wall_time_s: f64,
    /// Output path (relative to the manifest) → sha256.
    pub outputs: BTreeMap<String, String>,
}

/// Collects facts during a run and writes the manifest at the end.
pub struct RunRecorder {
    started: Instant,
    config: Vec<u8>,
    pub seed: Option<u64>,
    pub budget: Option<BudgetSnapshot>,
    pub truncated: bool,
    outputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn start() -> Self {
        Self {
            started: Instant::now(),
            config: Vec::new(),
            seed: None,
            budget: None,
            truncated: false,
            outputs: Vec::new(),
        }
    }

    /// Adds bytes the run's behaviour depends on to the config fingerprint.
    pub fn config_input(&mut self, label: &str, bytes: &[u8]) {
        self.config.extend_from_slice(label.as_bytes());
        self.config.push(0);
        self.config.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        self.config.extend_from_slice(bytes);
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn finish(self, manifest_path: &Path) -> Result<()> {
        let base = manifest_path.parent().unwrap_or(Path::new(""));
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let key = p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/");
            outputs.insert(key, hash_file(p).with_context(|| format!("hashing {}", p.display()))?);
        }
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command_line: std::env::args().collect(),
            config_fingerprint: fingerprint(&self.config),
            seed: self.seed,
            budget: self.budget,
            truncated: self.truncated,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        write_atomic(manifest_path, &bytes).with_context(|| format!("writing {}", manifest_path.display()))
    }
}

/// `dir/report.json` → `dir/report.json.run.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
