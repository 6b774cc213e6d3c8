use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::ParamVector;
use crate::taskbench::{Label, Sample, Task};

/// Model architecture. Softmax parameters are laid out as the row-major
/// `classes x features` weight matrix followed by the `classes` biases;
/// linear parameters are the `features` weights followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    Softmax { features: usize, classes: usize },
    Linear { features: usize },
}

impl Arch {
    pub fn for_task(task: Task, features: usize) -> Arch {
        match task {
            Task::Classification { classes } => Arch::Softmax { features, classes },
            Task::Regression => Arch::Linear { features },
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Arch::Softmax { features, classes } => features * classes + classes,
            Arch::Linear { features } => features + 1,
        }
    }

    pub fn features(&self) -> usize {
        match *self {
            Arch::Softmax { features, .. } | Arch::Linear { features } => features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Arch,
    params: ParamVector,
}

impl Model {
    pub fn new(arch: Arch, params: ParamVector) -> Result<Self> {
        params.ensure_dim(arch.dim())?;
        Ok(Model { arch, params })
    }

    pub fn zeros(arch: Arch) -> Self {
        Model {
            arch,
            params: ParamVector::zeros(arch.dim()),
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        params.ensure_dim(self.arch.dim())?;
        self.params = params;
        Ok(())
    }

    /// Class logits for a softmax model.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let Arch::Softmax { features, classes } = self.arch else {
            panic!("logits on a non-softmax model");
        };
        let (w, b) = self.params.split_at(features * classes);
        (0..classes)
            .map(|c| {
                w[c * features..(c + 1) * features]
                    .iter()
                    .zip(x)
                    .map(|(a, v)| a * v)
                    .sum::<f64>()
                    + b[c]
            })
            .collect()
    }

    /// Argmax class, lowest index on ties.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict_value(&self, x: &[f64]) -> f64 {
        let Arch::Linear { features } = self.arch else {
            panic!("predict_value on a non-linear model");
        };
        self.params[..features].iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.params[features]
    }

    fn check_batch(&self, batch: &[&Sample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let features = self.arch.features();
        for s in batch {
            if s.features.len() != features {
                return Err(Error::DimensionMismatch {
                    expected: features,
                    actual: s.features.len(),
                });
            }
            match (self.arch, s.label) {
                (Arch::Softmax { classes, .. }, Label::Class(c)) if c < classes => {}
                (Arch::Linear { .. }, Label::Value(_)) => {}
                _ => return Err(Error::TaskMismatch("sample label does not fit the model")),
            }
        }
        Ok(())
    }

    /// Mean cross-entropy (softmax) or mean `0.5 * (y_hat - y)^2` (linear).
    pub fn loss(&self, batch: &[&Sample]) -> Result<f64> {
        self.check_batch(batch)?;
        let total: f64 = match self.arch {
            Arch::Softmax { .. } => batch
                .iter()
                .map(|s| {
                    let logits = self.logits(&s.features);
                    let c = s.label.class().expect("checked");
                    log_sum_exp(&logits) - logits[c]
                })
                .sum(),
            Arch::Linear { .. } => batch
                .iter()
                .map(|s| {
                    let r = self.predict_value(&s.features) - s.label.value().expect("checked");
                    0.5 * r * r
                })
                .sum(),
        };
        Ok(total / batch.len() as f64)
    }

    /// Closed-form mean gradient of [`Model::loss`] over `batch`.
    pub fn gradient(&self, batch: &[&Sample]) -> Result<ParamVector> {
        self.check_batch(batch)?;
        let mut grad = vec![0.0; self.arch.dim()];
        match self.arch {
            Arch::Softmax { features, classes } => {
                let (gw, gb) = grad.split_at_mut(features * classes);
                for s in batch {
                    let probs = softmax(&self.logits(&s.features));
                    let target = s.label.class().expect("checked");
                    for (c, p) in probs.into_iter().enumerate() {
                        let r = p - if c == target { 1.0 } else { 0.0 };
                        gb[c] += r;
                        for (g, x) in gw[c * features..(c + 1) * features].iter_mut().zip(&s.features) {
                            *g += r * x;
                        }
                    }
                }
            }
            Arch::Linear { features } => {
                for s in batch {
                    let r = self.predict_value(&s.features) - s.label.value().expect("checked");
                    for (g, x) in grad[..features].iter_mut().zip(&s.features) {
                        *g += r * x;
                    }
                    grad[features] += r;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        Ok(grad.into_iter().map(|g| g * inv).collect())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean loss gradient of `model` over `batch`.
pub fn gradient(model: &Model, batch: &[&Sample]) -> Result<ParamVector> {
    model.gradient(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_hand_gradient() {
        let m = Model::zeros(Arch::Linear { features: 1 });
        let s = Sample::regressed(vec![1.0], 2.0);
        assert_eq!(m.gradient(&[&s]).unwrap(), ParamVector::from([-2.0, -2.0]));
    }

    #[test]
    fn softmax_uniform_logits_bias_block() {
        let z = 4;
        let m = Model::zeros(Arch::Softmax { features: 2, classes: z });
        let s = Sample::classified(vec![0.5, -1.0], 2);
        let g = m.gradient(&[&s]).unwrap();
        let bias = &g[2 * z..];
        for (c, v) in bias.iter().enumerate() {
            let expected = if c == 2 { -((z - 1) as f64) / z as f64 } else { 1.0 / z as f64 };
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let m = Model::zeros(Arch::Linear { features: 1 });
        assert_eq!(m.gradient(&[]), Err(Error::Empty("gradient batch")));
    }

    #[test]
    fn wrong_label_kind_rejected() {
        let m = Model::zeros(Arch::Linear { features: 1 });
        let s = Sample::classified(vec![1.0], 0);
        assert!(m.gradient(&[&s]).is_err());
    }

    #[test]
    fn ties_break_low() {
        let m = Model::zeros(Arch::Softmax { features: 2, classes: 3 });
        assert_eq!(m.predict_class(&[1.0, 1.0]), 0);
    }
}
