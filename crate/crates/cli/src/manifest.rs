//! The run manifest: which seeds of which config go where, and how far
//! each one got. Written as `manifest.json` next to the run outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Done,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hex SHA-256 of the canonical config with the seed zeroed.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub runs: BTreeMap<u64, RunStatus>,
}

impl RunManifest {
    pub fn new(config_hash: String, seeds: Vec<u64>, out_dir: PathBuf) -> Result<Self> {
        if seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        let mut runs = BTreeMap::new();
        for &s in &seeds {
            if runs.insert(s, RunStatus::Pending).is_some() {
                return Err(CliError::Config(format!("seed {s} listed twice")));
            }
        }
        Ok(RunManifest {
            config_hash,
            seeds,
            out_dir,
            runs,
        })
    }

    /// Directory holding the outputs of one seed.
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed-{seed}"))
    }

    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.runs
            .iter()
            .filter_map(|(&s, st)| match st {
                RunStatus::Failed { error } => Some((s, error.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn completed(&self) -> Vec<u64> {
        self.runs
            .iter()
            .filter(|(_, st)| **st == RunStatus::Done)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn write(&self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::bad_dir(path, e.to_string()))
    }
}

/// Shared handle through which concurrent jobs report status. Every update
/// rewrites `manifest.json` while holding the lock, so the file always has
/// exactly one writer.
pub struct ManifestWriter {
    inner: Mutex<RunManifest>,
}

impl ManifestWriter {
    pub fn new(manifest: RunManifest) -> Result<Self> {
        manifest.write()?;
        Ok(ManifestWriter {
            inner: Mutex::new(manifest),
        })
    }

    pub fn set(&self, seed: u64, status: RunStatus) -> Result<()> {
        let mut m = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        m.runs.insert(seed, status);
        m.write()
    }

    pub fn into_inner(self) -> RunManifest {
        self.inner.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}
