//! Convergence reports from recorded traces.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use secureafl::orchestrator::{read_trace_csv, theory_probe, ProbeSettings, TheoryReport};

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::sweep::{load_config, CONFIG_FILE, TRACE_FILE};

pub const THEORY_FILE: &str = "theory.json";

fn probe_seed_dir(dir: &Path) -> Result<TheoryReport> {
    let cfg = load_config(&dir.join(CONFIG_FILE))?;
    let path = dir.join(TRACE_FILE);
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let traces = read_trace_csv(file)?;
    Ok(theory_probe(&traces, ProbeSettings::new(cfg.tau_max))?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Probes a single run directory (one holding `trace.csv`) or every
/// completed seed of a sweep directory. Writes `theory.json` into each
/// probed run directory; for a sweep, the top-level `theory.json` maps
/// seeds to reports. Returns the files written.
pub fn probe_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(TRACE_FILE).is_file() {
        let report = probe_seed_dir(dir)?;
        let out = dir.join(THEORY_FILE);
        write_json(&out, &report)?;
        return Ok(vec![out]);
    }
    let manifest = RunManifest::read(dir)?;
    let completed = manifest.completed();
    if completed.is_empty() {
        return Err(CliError::bad_dir(dir, "no completed runs to probe"));
    }
    let mut written = Vec::new();
    let mut reports = BTreeMap::new();
    for seed in completed {
        // the manifest records where it was written; resolve seeds against
        // the directory we were given so moved sweeps still probe
        let seed_dir = dir.join(format!("seed-{seed}"));
        let report = probe_seed_dir(&seed_dir)?;
        let out = seed_dir.join(THEORY_FILE);
        write_json(&out, &report)?;
        written.push(out);
        reports.insert(seed, report);
    }
    let out = dir.join(THEORY_FILE);
    write_json(&out, &reports)?;
    written.push(out);
    Ok(written)
}
