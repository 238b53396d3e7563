//! Run manifest: which artifacts exist for which configuration.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::Run;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    /// Artifact name to path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    /// Manifest on disk when it belongs to this configuration, else a fresh one.
    pub fn current(run: &Run) -> Self {
        let path = run.path(MANIFEST_FILE);
        let existing = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
            .filter(|m| m.config_hash == run.hash);
        existing.unwrap_or_else(|| RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: run.config_path.display().to_string(),
            config_hash: run.hash.clone(),
            created_unix: now(),
            updated_unix: now(),
            artifacts: BTreeMap::new(),
        })
    }

    /// Whether every named artifact is recorded for this configuration and present.
    pub fn has(&self, run: &Run, names: &[&str]) -> bool {
        names.iter().all(|n| self.artifacts.get(*n).is_some_and(|p| run.path(p).exists()))
    }

    pub fn record(&mut self, name: &str, rel: &str) {
        self.artifacts.insert(name.to_string(), rel.to_string());
    }

    /// Drops entries made stale by rerunning an upstream stage.
    pub fn forget(&mut self, prefix: &str) {
        self.artifacts.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn write(&mut self, run: &Run) -> Result<()> {
        for (name, rel) in &self.artifacts {
            if !run.path(rel).exists() {
                bail!("manifest artifact `{name}` is missing: {}", run.path(rel).display());
            }
        }
        self.updated_unix = now();
        self.tool_version = env!("CARGO_PKG_VERSION").to_string();
        let path = run.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
