//! Experiment configuration, read from TOML.
//!
//! A minimal document names only the task and the defense:
//!
//! ```toml
//! [task]
//! kind = "classification"
//!
//! [defense]
//! kind = "secureafl"
//! ```
//!
//! Every other key falls back to its default. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::taskbench::Task;

/// Highest accepted share of malicious clients.
pub const MAX_MALICIOUS_FRACTION: f64 = 0.45;

fn default_classes() -> usize {
    3
}
fn default_features() -> usize {
    10
}
fn default_train() -> usize {
    2000
}
fn default_test() -> usize {
    1000
}
fn default_separation() -> f64 {
    2.0
}
fn default_noise() -> f64 {
    0.1
}

/// Synthetic learning task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskConfig {
    /// Gaussian mixture, softmax regression.
    Classification {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_train")]
        train_samples: usize,
        #[serde(default = "default_test")]
        test_samples: usize,
        /// Distance of each class mean from the origin.
        #[serde(default = "default_separation")]
        separation: f64,
    },
    /// Linear-Gaussian data, least squares.
    Regression {
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_train")]
        train_samples: usize,
        #[serde(default = "default_test")]
        test_samples: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
}

impl TaskConfig {
    pub fn classification() -> Self {
        TaskConfig::Classification {
            classes: default_classes(),
            features: default_features(),
            train_samples: default_train(),
            test_samples: default_test(),
            separation: default_separation(),
        }
    }

    pub fn regression() -> Self {
        TaskConfig::Regression {
            features: default_features(),
            train_samples: default_train(),
            test_samples: default_test(),
            noise_std: default_noise(),
        }
    }

    pub fn task(&self) -> Task {
        match *self {
            TaskConfig::Classification { classes, .. } => Task::Classification { classes },
            TaskConfig::Regression { .. } => Task::Regression,
        }
    }

    pub fn features(&self) -> usize {
        match *self {
            TaskConfig::Classification { features, .. } | TaskConfig::Regression { features, .. } => features,
        }
    }

    pub fn sizes(&self) -> (usize, usize) {
        match *self {
            TaskConfig::Classification {
                train_samples,
                test_samples,
                ..
            }
            | TaskConfig::Regression {
                train_samples,
                test_samples,
                ..
            } => (train_samples, test_samples),
        }
    }

    fn validate(&self) -> Result<()> {
        let (train, test) = self.sizes();
        if train == 0 {
            return Err(Error::config("task.train_samples", "must be at least 1"));
        }
        if test == 0 {
            return Err(Error::config("task.test_samples", "must be at least 1"));
        }
        match *self {
            TaskConfig::Classification {
                classes,
                features,
                separation,
                ..
            } => {
                if classes < 2 {
                    return Err(Error::config("task.classes", "need at least two classes"));
                }
                if features < classes {
                    return Err(Error::config("task.features", "must be at least the class count"));
                }
                if !(separation >= 0.0) || !separation.is_finite() {
                    return Err(Error::config("task.separation", "must be finite and >= 0"));
                }
            }
            TaskConfig::Regression { features, noise_std, .. } => {
                if features == 0 {
                    return Err(Error::config("task.features", "must be at least 1"));
                }
                if !(noise_std >= 0.0) || !noise_std.is_finite() {
                    return Err(Error::config("task.noise_std", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

fn default_n_clients() -> usize {
    50
}
fn default_malicious_fraction() -> f64 {
    0.2
}
fn default_tau_max() -> usize {
    10
}
fn default_rounds() -> usize {
    2000
}
fn default_eta() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    32
}
fn default_noniid_x() -> f64 {
    0.5
}
fn default_eval_interval() -> usize {
    50
}
fn default_true() -> bool {
    true
}

/// One experiment: task, population, schedule, defense and attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_clients")]
    pub n_clients: usize,
    #[serde(default = "default_malicious_fraction")]
    pub malicious_fraction: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Minibatch size; `0` means the whole shard.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Probability that a sample lands in its own label group.
    #[serde(default = "default_noniid_x")]
    pub noniid_x: f64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    /// Record per-round convergence traces (benign gradient norm,
    /// estimation error, tracking error).
    #[serde(default = "default_true")]
    pub probes: bool,
    pub task: TaskConfig,
    pub defense: DefenseConfig,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl ExperimentConfig {
    /// Defaults everywhere except the two required sections.
    pub fn new(task: TaskConfig, defense: DefenseConfig) -> Self {
        ExperimentConfig {
            seed: 0,
            n_clients: default_n_clients(),
            malicious_fraction: default_malicious_fraction(),
            tau_max: default_tau_max(),
            rounds: default_rounds(),
            eta: default_eta(),
            batch_size: default_batch_size(),
            noniid_x: default_noniid_x(),
            eval_interval: default_eval_interval(),
            probes: true,
            task,
            defense,
            attack: AttackConfig::default(),
        }
    }

    /// Number of malicious clients, `round(fraction * n)`.
    pub fn malicious_count(&self) -> usize {
        (self.malicious_fraction * self.n_clients as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::config("n_clients", "need at least two clients"));
        }
        if !(0.0..=MAX_MALICIOUS_FRACTION).contains(&self.malicious_fraction) {
            return Err(Error::config(
                "malicious_fraction",
                format!("{} must lie in [0, {MAX_MALICIOUS_FRACTION}]", self.malicious_fraction),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be at least 1"));
        }
        self.task.validate()?;
        let task = self.task.task();
        if let Task::Classification { classes } = task {
            if self.n_clients < classes {
                return Err(Error::config("n_clients", "must be at least the class count"));
            }
            let lower = 1.0 / classes as f64;
            if !(self.noniid_x >= lower - 1e-12 && self.noniid_x <= 1.0) {
                return Err(Error::config("noniid_x", format!("must lie in [1/{classes}, 1]")));
            }
        }
        if self.task.sizes().0 < self.n_clients {
            return Err(Error::config("task.train_samples", "fewer samples than clients"));
        }
        self.defense.validate(self.eta)?;
        self.attack.validate(task, self.task.features())?;
        if self.attack.kind.needs_benign_snapshot() && self.n_clients - self.malicious_count() < 2 {
            return Err(Error::config("malicious_fraction", "this attack needs at least two benign clients"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Parses and validates a TOML experiment description.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        if let Some(key) = missing_field(&msg) {
            return Error::config(key, "missing required key");
        }
        match e.span().and_then(|span| key_at(text, span.start)) {
            Some(key) => Error::config(key, msg),
            None => Error::Parse(msg),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Key of the `key = value` line containing byte `offset`, if any.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let start = text.get(..offset)?.rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim();
    (!key.is_empty() && !key.starts_with('[')).then(|| key.to_string())
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("missing field `")?;
    Some(rest.split('`').next()?.to_string())
}
