//! Method-by-attack tables over finished sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use secureafl::orchestrator::Metric;

use crate::error::{CliError, Result};
use crate::sweep::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

/// Rows are defenses, columns attacks, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub metric: Metric,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`; `None` where no sweep covered the pair.
    pub cells: Vec<Vec<Option<String>>>,
}

fn format_value(x: f64) -> String {
    format!("{x:.4}")
}

fn final_mean(summary: &Summary, metric: Metric) -> Option<f64> {
    summary.metrics.get(metric.name()).and_then(|m| m.mean)
}

/// Cell text for one sweep: the metric mean, or `TER/ASR` when reporting
/// TER for a targeted attack whose ASR is available.
fn cell(summary: &Summary, metric: Metric, dir: &Path) -> Result<String> {
    let value = final_mean(summary, metric).ok_or_else(|| CliError::MissingMetric {
        run: dir.display().to_string(),
        metric: metric.name().into(),
    })?;
    let mut text = format_value(value);
    if metric == Metric::Ter && summary.targeted {
        if let Some(asr) = final_mean(summary, Metric::Asr) {
            write!(text, "/{}", format_value(asr)).unwrap();
        }
    }
    Ok(text)
}

pub fn compare_table(dirs: &[PathBuf], metric: Metric) -> Result<CompareTable> {
    if dirs.len() < 2 {
        return Err(CliError::Config("compare needs at least two run directories".into()));
    }
    let mut table = CompareTable {
        metric,
        rows: Vec::new(),
        columns: Vec::new(),
        cells: Vec::new(),
    };
    for dir in dirs {
        let summary = Summary::read(dir)?;
        if summary.completed.is_empty() {
            return Err(CliError::bad_dir(dir, "no completed runs"));
        }
        let text = cell(&summary, metric, dir)?;
        let r = match table.rows.iter().position(|d| *d == summary.defense) {
            Some(r) => r,
            None => {
                table.rows.push(summary.defense.clone());
                table.cells.push(vec![None; table.columns.len()]);
                table.rows.len() - 1
            }
        };
        let c = match table.columns.iter().position(|a| *a == summary.attack) {
            Some(c) => c,
            None => {
                table.columns.push(summary.attack.clone());
                for row in &mut table.cells {
                    row.push(None);
                }
                table.columns.len() - 1
            }
        };
        if table.cells[r][c].is_some() {
            return Err(CliError::bad_dir(
                dir,
                format!("second sweep for defense `{}` under attack `{}`", summary.defense, summary.attack),
            ));
        }
        table.cells[r][c] = Some(text);
    }
    Ok(table)
}

impl CompareTable {
    pub fn render(&self, format: TableFormat) -> String {
        let mut grid: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header = vec![format!("defense\\{}", self.metric)];
        header.extend(self.columns.iter().cloned());
        grid.push(header);
        for (name, cells) in self.rows.iter().zip(&self.cells) {
            let mut line = vec![name.clone()];
            line.extend(cells.iter().map(|c| c.clone().unwrap_or_else(|| "-".into())));
            grid.push(line);
        }
        match format {
            TableFormat::Csv => grid.iter().map(|l| l.join(",") + "\n").collect(),
            TableFormat::Text => {
                let widths: Vec<usize> = (0..grid[0].len())
                    .map(|j| grid.iter().map(|l| l[j].len()).max().unwrap_or(0))
                    .collect();
                let mut out = String::new();
                for line in &grid {
                    let padded: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
                    out.push_str(padded.join("  ").trim_end());
                    out.push('\n');
                }
                out
            }
        }
    }
}
