//! Strict configuration loading.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use comicl::data::TaskKind;
use comicl::harness::ExperimentConfig;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::Common;

/// Parsed configuration with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub config_path: PathBuf,
    /// Output directory, relative paths resolved against the config file.
    pub dir: PathBuf,
    /// SHA-256 of the effective configuration.
    pub hash: String,
}

impl Run {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Recursively overlays `user` onto `base`.
fn merge(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses TOML into a configuration; errors name the offending key. Keys the
/// file leaves out take the defaults of its task.
pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
    let user: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| e.message().to_string())?;
    let task = user.get("task").and_then(|t| TaskKind::deserialize(t.clone()).ok());
    let value = match task {
        Some(task) => {
            let mut base = toml::Value::try_from(ExperimentConfig::new(task)).map_err(|e| e.to_string())?;
            merge(&mut base, user);
            base
        }
        None => user,
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        if path == "." {
            msg
        } else {
            format!("key `{path}`: {msg}")
        }
    })
}

/// Hash of the configuration; the worker count does not affect results.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.experiment.jobs = 1;
    let canonical = serde_json::to_string(&c).expect("configuration serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(args: &Common) -> Result<Run> {
    let path = &args.config;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = parse(&text).map_err(|m| anyhow!("{}: {m}", path.display()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(j) = args.jobs {
        cfg.experiment.jobs = j;
    }
    cfg.validate().with_context(|| path.display().to_string())?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = if cfg.output.dir.is_absolute() { cfg.output.dir.clone() } else { base.join(&cfg.output.dir) };
    let hash = config_hash(&cfg);
    Ok(Run { cfg, config_path: path.clone(), dir, hash })
}
