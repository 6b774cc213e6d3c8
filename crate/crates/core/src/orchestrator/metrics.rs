//! Run output: evaluation records on the eval grid plus per-round traces.
//!
//! `metrics.csv` holds the evaluation records: a `round` column followed by
//! the run's metric columns in alphabetical order, floats written with 17
//! significant digits so they parse back bit-exactly. Inapplicable or
//! undefined cells are left empty. `trace.csv` holds one row per round.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskbench::csv_err;

/// A column of `metrics.csv`. Variants are declared in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Share of accepted uploads since the previous evaluation.
    Accepted,
    /// Attack success rate on triggered test samples.
    Asr,
    /// Mean of `||grad F_H(w^t)||^2` since the previous evaluation.
    GradNorm,
    /// Mean finite Lipschitz factor since the previous evaluation.
    Lambda,
    RelEstError,
    Rmse,
    Ter,
    TrackingError,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Accepted,
        Metric::Asr,
        Metric::GradNorm,
        Metric::Lambda,
        Metric::RelEstError,
        Metric::Rmse,
        Metric::Ter,
        Metric::TrackingError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accepted => "accepted",
            Metric::Asr => "asr",
            Metric::GradNorm => "grad_norm",
            Metric::Lambda => "lambda",
            Metric::RelEstError => "rel_est_error",
            Metric::Rmse => "rmse",
            Metric::Ter => "ter",
            Metric::TrackingError => "tracking_error",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric column `{s}`")))
    }
}

/// Metric values after `round` completed rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub round: usize,
    pub values: BTreeMap<Metric, f64>,
}

impl EvalRecord {
    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values.get(&m).copied()
    }
}

/// What happened in one server round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub client: usize,
    pub staleness: usize,
    pub accepted: bool,
    pub lambda: Option<f64>,
    pub grad_norm: Option<f64>,
    pub rel_est_error: Option<f64>,
    pub tracking_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    /// Metric columns of this run, sorted.
    pub columns: Vec<Metric>,
    pub records: Vec<EvalRecord>,
    pub traces: Vec<RoundTrace>,
    /// Elapsed time; kept out of `metrics.csv` so the file is reproducible.
    pub wall_clock_secs: f64,
}

impl MetricsLog {
    pub fn new(mut columns: Vec<Metric>) -> Self {
        columns.sort();
        columns.dedup();
        MetricsLog {
            columns,
            records: Vec::new(),
            traces: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn push(&mut self, record: EvalRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.round <= last.round {
                return Err(Error::RoundOutOfOrder {
                    expected: last.round + 1,
                    actual: record.round,
                });
            }
        }
        if let Some(m) = record.values.keys().find(|m| !self.columns.contains(m)) {
            return Err(Error::invalid("record", format!("metric `{m}` is not a column of this log")));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    /// Final value of `m`, if the run has that column and it is defined.
    pub fn final_value(&self, m: Metric) -> Option<f64> {
        self.records.last().and_then(|r| r.get(m))
    }

    pub fn header(&self) -> Vec<&'static str> {
        std::iter::once("round").chain(self.columns.iter().map(|m| m.name())).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_metrics_csv(&self.columns, &self.records, w)
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in &self.traces {
            out.serialize(t).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to recover every `f64` exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_metrics_csv<W: Write>(columns: &[Metric], records: &[EvalRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<&str> = std::iter::once("round").chain(columns.iter().map(|m| m.name())).collect();
    out.write_record(&header).map_err(csv_err)?;
    for r in records {
        let row: Vec<String> = std::iter::once(r.round.to_string())
            .chain(columns.iter().map(|m| r.get(*m).map(format_f64).unwrap_or_default()))
            .collect();
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a `metrics.csv`, checking the header, row widths and round order.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<(Vec<Metric>, Vec<EvalRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut names = header.iter();
    if names.next() != Some("round") {
        return Err(Error::Parse("first column must be `round`".into()));
    }
    let columns = names.map(Metric::from_str).collect::<Result<Vec<_>>>()?;
    if columns.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Parse("metric columns must be unique and sorted".into()));
    }
    let mut log = MetricsLog::new(columns.clone());
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        if row.len() != columns.len() + 1 {
            return Err(Error::Parse(format!("row has {} fields, header has {}", row.len(), columns.len() + 1)));
        }
        let round = row[0]
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("round `{}`: {e}", &row[0])))?;
        let mut values = BTreeMap::new();
        for (m, cell) in columns.iter().zip(row.iter().skip(1)) {
            if cell.is_empty() {
                continue;
            }
            let x = cell
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{m} `{cell}`: {e}")))?;
            values.insert(*m, x);
        }
        log.push(EvalRecord { round, values }).map_err(|e| Error::Parse(e.to_string()))?;
    }
    Ok((log.columns, log.records))
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<RoundTrace>> {
    let mut rdr = csv::Reader::from_reader(r);
    let traces = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<RoundTrace>, _>>()
        .map_err(csv_err)?;
    if traces.windows(2).any(|p| p[1].round != p[0].round + 1) {
        return Err(Error::Parse("trace rounds must be consecutive".into()));
    }
    Ok(traces)
}
