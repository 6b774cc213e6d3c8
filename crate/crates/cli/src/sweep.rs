//! Seed sweeps: one config, several seeds, one output directory.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use secureafl::orchestrator::{parse_config, run_experiment, ExperimentConfig, MetricsLog, TaskConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::manifest::{ManifestWriter, RunManifest, RunStatus};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_SCHEMA: &str = "secureafl-summary/1";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";

/// Options of the `run` verb.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Seeds to run; `None` means the config's own seed.
    pub seeds: Option<Vec<u64>>,
    /// Output root; the sweep creates its own directory below it.
    pub out_root: PathBuf,
    pub jobs: usize,
    /// Replace an existing output directory.
    pub force: bool,
}

/// Mean and population standard deviation of a final-round metric across
/// the seeds where it was defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
    /// Final-round value per seed; `null` where the metric was undefined.
    pub values: BTreeMap<u64, Option<f64>>,
}

impl MetricSummary {
    pub fn from_values(values: BTreeMap<u64, Option<f64>>) -> Self {
        let defined: Vec<f64> = values.values().flatten().copied().collect();
        let count = defined.len();
        let (mean, std) = if count == 0 {
            (None, None)
        } else {
            let n = count as f64;
            let mean = defined.iter().sum::<f64>() / n;
            let var = defined.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (Some(mean), Some(var.sqrt()))
        };
        MetricSummary {
            mean,
            std,
            count,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub config_hash: String,
    /// Defense label, e.g. `secureafl`, `secureafl-estimatesonly`, `kardam`.
    pub defense: String,
    pub attack: String,
    /// Whether the attack is scored by attack success rate.
    pub targeted: bool,
    pub task: String,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub completed: Vec<u64>,
    pub failed: Vec<FailedRun>,
    /// Keyed by metric column name.
    pub metrics: BTreeMap<String, MetricSummary>,
    pub wall_clock_secs: BTreeMap<u64, f64>,
}

impl Summary {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| CliError::bad_dir(&path, e.to_string()))?;
        if summary.schema != SUMMARY_SCHEMA {
            return Err(CliError::bad_dir(path, format!("unsupported schema `{}`", summary.schema)));
        }
        Ok(summary)
    }
}

/// SHA-256 over the canonical TOML of `cfg` with the seed zeroed, so every
/// seed of one experiment shares a hash.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut canonical = cfg.clone();
    canonical.seed = 0;
    let text = canonical.to_toml()?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

/// `<out_root>/<config file stem>-<first 12 hash digits>`.
pub fn sweep_dir(out_root: &Path, config_path: &Path, hash: &str) -> PathBuf {
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    out_root.join(format!("{stem}-{}", &hash[..12]))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Runs every seed of the config at `config_path` and writes the sweep
/// directory. Returns the finished manifest when all runs completed and
/// [`CliError::RunsFailed`] otherwise; in both cases every completed run's
/// outputs and `summary.json` are on disk.
pub fn run_sweep(config_path: &Path, opts: &SweepOptions) -> Result<RunManifest> {
    let cfg = load_config(config_path)?;
    if opts.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let hash = config_hash(&cfg)?;
    let seeds = opts.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    let out_dir = sweep_dir(&opts.out_root, config_path, &hash);
    let manifest = RunManifest::new(hash, seeds, out_dir.clone())?;

    if out_dir.exists() {
        if !opts.force {
            return Err(CliError::OutputExists(out_dir));
        }
        fs::remove_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    }
    create_dir(&out_dir)?;
    let mut canonical = cfg.clone();
    canonical.seed = 0;
    write_file(&out_dir.join(CONFIG_FILE), canonical.to_toml()?.as_bytes())?;

    let seed_dirs: Vec<(u64, PathBuf)> = manifest.seeds.iter().map(|&s| (s, manifest.seed_dir(s))).collect();
    let writer = ManifestWriter::new(manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", opts.jobs)))?;
    let results: Vec<(u64, std::result::Result<MetricsLog, String>)> = pool.install(|| {
        seed_dirs
            .par_iter()
            .map(|(seed, dir)| {
                let seed = *seed;
                let outcome = run_one(&cfg, seed, dir);
                let status = match &outcome {
                    Ok(_) => RunStatus::Done,
                    Err(e) => RunStatus::Failed { error: e.clone() },
                };
                // a manifest write failure is reported as a failure of this seed
                let outcome = match writer.set(seed, status) {
                    Ok(()) => outcome,
                    Err(e) => Err(e.to_string()),
                };
                (seed, outcome)
            })
            .collect()
    });
    let manifest = writer.into_inner();

    let summary = summarize(&cfg, &manifest, &results);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out_dir.join(SUMMARY_FILE), text.as_bytes())?;

    let failed: Vec<String> = results
        .iter()
        .filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::RunsFailed {
            failed: failed.len(),
            total: results.len(),
            details: failed,
        })
    }
}

/// Runs one seed and writes its directory. Panics inside the simulator are
/// caught and reported as failures of this seed only.
fn run_one(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> std::result::Result<MetricsLog, String> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let log = panic::catch_unwind(AssertUnwindSafe(|| run_experiment(&cfg)))
        .map_err(|p| {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            format!("panicked: {msg}")
        })?
        .map_err(|e| e.to_string())?;
    write_seed_dir(&cfg, &log, dir).map_err(|e| e.to_string())?;
    Ok(log)
}

fn write_seed_dir(cfg: &ExperimentConfig, log: &MetricsLog, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let mut metrics = Vec::new();
    log.write_csv(&mut metrics)?;
    write_file(&dir.join(METRICS_FILE), &metrics)?;
    let mut trace = Vec::new();
    log.write_trace_csv(&mut trace)?;
    write_file(&dir.join(TRACE_FILE), &trace)
}

fn summarize(
    cfg: &ExperimentConfig,
    manifest: &RunManifest,
    results: &[(u64, std::result::Result<MetricsLog, String>)],
) -> Summary {
    let mut per_metric: BTreeMap<String, BTreeMap<u64, Option<f64>>> = BTreeMap::new();
    let mut wall_clock_secs = BTreeMap::new();
    for (seed, result) in results {
        let Ok(log) = result else { continue };
        wall_clock_secs.insert(*seed, log.wall_clock_secs);
        for &m in &log.columns {
            per_metric
                .entry(m.name().to_string())
                .or_default()
                .insert(*seed, log.final_value(m));
        }
    }
    let attack = serde_json::to_value(cfg.attack.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    Summary {
        schema: SUMMARY_SCHEMA.into(),
        config_hash: manifest.config_hash.clone(),
        defense: cfg.defense.label(),
        attack,
        targeted: cfg.attack.kind.is_targeted(),
        task: match cfg.task {
            TaskConfig::Classification { .. } => "classification".into(),
            TaskConfig::Regression { .. } => "regression".into(),
        },
        rounds: cfg.rounds,
        seeds: manifest.seeds.clone(),
        completed: manifest.completed(),
        failed: manifest
            .failures()
            .into_iter()
            .map(|(seed, error)| FailedRun {
                seed,
                error: error.to_string(),
            })
            .collect(),
        metrics: per_metric
            .into_iter()
            .map(|(k, v)| (k, MetricSummary::from_values(v)))
            .collect(),
        wall_clock_secs,
    }
}
