use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::RngStream;

/// Supervision attached to a [`Sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Value(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Label::Value(v) => Some(v),
            Label::Class(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
    pub triggered: bool,
}

impl Sample {
    pub fn classified(features: Vec<f64>, class: usize) -> Self {
        Sample {
            features,
            label: Label::Class(class),
            triggered: false,
        }
    }

    pub fn regressed(features: Vec<f64>, target: f64) -> Self {
        Sample {
            features,
            label: Label::Value(target),
            triggered: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

/// Homogeneous collection of samples sharing one task and feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    task: Task,
    feature_dim: usize,
}

impl Dataset {
    /// Builds a dataset, checking labels and feature widths.
    pub fn new(task: Task, feature_dim: usize, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            match (task, s.label) {
                (Task::Classification { classes }, Label::Class(c)) if c < classes => {}
                (Task::Regression, Label::Value(v)) if v.is_finite() => {}
                _ => return Err(Error::TaskMismatch("label does not fit the dataset task")),
            }
        }
        Ok(Dataset {
            samples,
            task,
            feature_dim,
        })
    }

    pub fn empty(task: Task, feature_dim: usize) -> Self {
        Dataset {
            samples: Vec::new(),
            task,
            feature_dim,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> Option<usize> {
        match self.task {
            Task::Classification { classes } => Some(classes),
            Task::Regression => None,
        }
    }

    /// Appends without validation; callers keep the task invariant.
    pub(crate) fn push_unchecked(&mut self, s: Sample) {
        self.samples.push(s);
    }

    pub(crate) fn map_samples(&self, f: impl FnMut(&Sample) -> Sample) -> Dataset {
        Dataset {
            samples: self.samples.iter().map(f).collect(),
            task: self.task,
            feature_dim: self.feature_dim,
        }
    }

    /// Splits off the trailing `len - at` samples.
    pub fn split_off(&mut self, at: usize) -> Dataset {
        let tail = self.samples.split_off(at.min(self.samples.len()));
        Dataset {
            samples: tail,
            task: self.task,
            feature_dim: self.feature_dim,
        }
    }

    /// Debug dump: feature columns then a `label` column, comma separated.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.feature_dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        out.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:e}")).collect();
            row.push(match s.label {
                Label::Class(c) => c.to_string(),
                Label::Value(v) => format!("{v:e}"),
            });
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`].
    pub fn read_csv<R: Read>(r: R, task: Task) -> Result<Dataset> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers().map_err(csv_err)?.clone();
        if header.is_empty() || header.get(header.len() - 1) != Some("label") {
            return Err(Error::Parse("last column must be `label`".into()));
        }
        let feature_dim = header.len() - 1;
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            if record.len() != header.len() {
                return Err(Error::Parse(format!(
                    "row has {} fields, header has {}",
                    record.len(),
                    header.len()
                )));
            }
            let features = record
                .iter()
                .take(feature_dim)
                .map(parse_f64)
                .collect::<Result<Vec<f64>>>()?;
            let raw = &record[feature_dim];
            let label = match task {
                Task::Classification { .. } => Label::Class(
                    raw.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad class label `{raw}`")))?,
                ),
                Task::Regression => Label::Value(parse_f64(raw)?),
            };
            samples.push(Sample {
                features,
                label,
                triggered: false,
            });
        }
        Dataset::new(task, feature_dim, samples)
    }
}

fn parse_f64(raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad number `{raw}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse(format!("non-finite number `{raw}`")))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Balanced Gaussian mixture: class `q` is centred on `sep * e_q` with unit
/// covariance.
pub fn gen_classification(
    classes: usize,
    feature_dim: usize,
    n: usize,
    sep: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("classes", "need at least two classes"));
    }
    if feature_dim < classes {
        return Err(Error::invalid("feature_dim", "must be at least the class count"));
    }
    if !(sep >= 0.0) || !sep.is_finite() {
        return Err(Error::invalid("sep", format!("{sep} must be finite and >= 0")));
    }
    if n < classes {
        return Err(Error::invalid(
            "n",
            format!("{n} samples cannot cover {classes} classes"),
        ));
    }
    let mut labels: Vec<usize> = (0..n).map(|j| j % classes).collect();
    rng.shuffle(&mut labels);
    let samples = labels
        .into_iter()
        .map(|q| {
            let mut x: Vec<f64> = (0..feature_dim).map(|_| rng.standard_normal()).collect();
            x[q] += sep;
            Sample::classified(x, q)
        })
        .collect();
    Dataset::new(Task::Classification { classes }, feature_dim, samples)
}

/// Linear-Gaussian regression data `y = w*.x + b* + noise` with a hidden
/// ground truth drawn from `rng`.
pub fn gen_regression(feature_dim: usize, n: usize, noise_std: f64, rng: &mut RngStream) -> Result<Dataset> {
    if feature_dim == 0 {
        return Err(Error::invalid("feature_dim", "must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid("noise_std", format!("{noise_std} must be finite and >= 0")));
    }
    let weights: Vec<f64> = (0..feature_dim).map(|_| rng.standard_normal()).collect();
    let bias = rng.standard_normal();
    let samples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..feature_dim).map(|_| rng.standard_normal()).collect();
            let y = weights.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                + bias
                + noise_std * rng.standard_normal();
            Sample::regressed(x, y)
        })
        .collect();
    Dataset::new(Task::Regression, feature_dim, samples)
}
