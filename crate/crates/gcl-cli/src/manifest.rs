//! Run manifests: every command leaves exactly one `run_manifest.json`
//! in its output directory recording the resolved configuration, seeds,
//! input hashes, and declared outputs. A directory that already holds a
//! manifest is refused unless `--force` is given.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::Digest;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_utc: String,
    pub unix_seconds: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub input_hashes: BTreeMap<String, String>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
}

/// Claims `out` for a fresh run: creates it and rejects a directory
/// that already holds a manifest unless `force` is set.
pub fn claim_out_dir(out: &Path, force: bool) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let existing = out.join(MANIFEST_NAME);
    if existing.exists() && !force {
        bail!(
            "{} already holds a run ({}); pass --force to overwrite",
            out.display(),
            MANIFEST_NAME
        );
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing input {}", path.display()))?;
    Ok(format!("{:x}", sha2::Sha256::digest(&bytes)))
}

fn now_fields() -> (String, u64) {
    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let stamp = time::OffsetDateTime::from_unix_timestamp(unix as i64)
        .ok()
        .and_then(|t| t.format(&time::format_description::well_known::Rfc3339).ok())
        .unwrap_or_default();
    (stamp, unix)
}

pub struct ManifestBuilder {
    command: String,
    seeds: BTreeMap<String, u64>,
    config: serde_json::Value,
    input_hashes: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seeds: BTreeMap::new(),
            config: serde_json::Value::Null,
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.config = serde_json::to_value(config).context("serializing resolved config")?;
        Ok(self)
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.input_hashes.insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }

    /// Verifies every declared output exists under `out`, then writes
    /// the manifest. Nothing is reported as written that is not on disk.
    pub fn write(self, out: &Path) -> Result<PathBuf> {
        for rel in &self.outputs {
            let p = out.join(rel);
            if !p.exists() {
                bail!("declared output missing: {}", p.display());
            }
        }
        let (created_utc, unix_seconds) = now_fields();
        let manifest = RunManifest {
            tool: "gcl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            created_utc,
            unix_seconds,
            seeds: self.seeds,
            config: self.config,
            input_hashes: self.input_hashes,
            outputs: self.outputs,
        };
        let path = out.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&manifest).context("encoding manifest")?;
        std::fs::write(&path, json.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
