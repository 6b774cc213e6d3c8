//! Server-side defenses.
//!
//! Every defense implements [`DefenseRule`]: given the single update that
//! arrived this round and the server's [`HistoryStore`], it returns the
//! aggregate `g^t` the caller applies as `w^{t+1} = w^t - eta * g^t`.

mod baselines;
mod primitives;
mod secureafl;

use serde::{Deserialize, Serialize};

pub use baselines::{asyncsgd_round, basgd_round, AsyncSgd, Basgd, BasgdState, Kardam};
pub use primitives::{clip_l2, lipschitz_factor};
pub use secureafl::{secureafl_round, variant_round, SecureAfl};

use crate::error::{Error, Result};
use crate::estimator::DEFAULT_RIDGE;
use crate::history::{HistoryStore, PhiMode};
use crate::numkit::ParamVector;

/// The update received this round.
#[derive(Debug, Clone, Copy)]
pub struct Upload<'a> {
    pub client: usize,
    pub update: &'a ParamVector,
    /// Round of the global model the client trained against.
    pub base_round: usize,
    /// Current server round `t`.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundDecision {
    pub accepted: bool,
    pub lambda: Option<f64>,
    pub threshold: Option<f64>,
    pub aggregate: ParamVector,
    pub estimates_used: usize,
    /// `(client, estimate)` for every client estimated this round.
    pub estimates: Vec<(usize, ParamVector)>,
}

impl RoundDecision {
    pub(crate) fn skip(dim: usize) -> Self {
        RoundDecision {
            accepted: false,
            lambda: None,
            threshold: None,
            aggregate: ParamVector::zeros(dim),
            estimates_used: 0,
            estimates: Vec::new(),
        }
    }
}

pub trait DefenseRule: Send {
    fn name(&self) -> &'static str;

    fn round(&mut self, upload: &Upload<'_>, hist: &mut HistoryStore) -> Result<RoundDecision>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    SecureAfl,
    AsyncSgd,
    Kardam,
    Basgd,
}

/// Ablations of the full defense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// Mean instead of coordinate-wise median.
    I,
    /// Accepted updates applied directly, no estimation.
    II,
    /// Filter disabled; the received update is always aggregated.
    III,
    /// Received updates never enter the aggregate.
    IV,
}

/// Where secant pairs for the estimator come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecantSource {
    /// Pairs from consecutive real uploads of the same client.
    #[default]
    Observed,
    /// Observed pairs plus the estimator's own `(dw, g_hat - g_anchor)` pairs
    /// pushed after every estimation.
    Recursive,
}

/// When a computed Lipschitz factor enters the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogPolicy {
    #[default]
    Always,
    OnAccept,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecureAflConfig {
    pub alpha: f64,
    pub epsilon: usize,
    pub clip_threshold: f64,
    pub eta: f64,
    pub ridge: f64,
    pub secant_source: SecantSource,
    pub log_policy: LogPolicy,
}

impl Default for SecureAflConfig {
    fn default() -> Self {
        SecureAflConfig {
            alpha: 0.8,
            epsilon: 3,
            clip_threshold: 50.0,
            eta: 0.01,
            ridge: DEFAULT_RIDGE,
            secant_source: SecantSource::Observed,
            log_policy: LogPolicy::Always,
        }
    }
}

impl SecureAflConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("defense.alpha", format!("{} not in (0, 1]", self.alpha)));
        }
        if self.epsilon < 1 {
            return Err(Error::config("defense.epsilon", "must be at least 1"));
        }
        if !(self.clip_threshold > 0.0) || !self.clip_threshold.is_finite() {
            return Err(Error::config("defense.clip_threshold", "must be finite and > 0"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config("eta", "must be finite and > 0"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::config("defense.ridge", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn default_alpha() -> f64 {
    0.8
}
fn default_epsilon() -> usize {
    3
}
fn default_clip() -> f64 {
    50.0
}
fn default_buckets() -> usize {
    3
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

/// Defense section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: usize,
    #[serde(default = "default_clip")]
    pub clip_threshold: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub secant_source: SecantSource,
    #[serde(default)]
    pub phi_mode: PhiMode,
    #[serde(default)]
    pub log_policy: LogPolicy,
}

impl DefenseConfig {
    pub fn new(kind: DefenseKind) -> Self {
        DefenseConfig {
            kind,
            alpha: default_alpha(),
            epsilon: default_epsilon(),
            clip_threshold: default_clip(),
            variant: Variant::Full,
            buckets: default_buckets(),
            ridge: default_ridge(),
            secant_source: SecantSource::default(),
            phi_mode: PhiMode::default(),
            log_policy: LogPolicy::default(),
        }
    }

    pub fn secureafl(&self, eta: f64) -> SecureAflConfig {
        SecureAflConfig {
            alpha: self.alpha,
            epsilon: self.epsilon,
            clip_threshold: self.clip_threshold,
            eta,
            ridge: self.ridge,
            secant_source: self.secant_source,
            log_policy: self.log_policy,
        }
    }

    pub fn validate(&self, eta: f64) -> Result<()> {
        self.secureafl(eta).validate()?;
        if self.buckets < 1 {
            return Err(Error::config("defense.buckets", "must be at least 1"));
        }
        Ok(())
    }

    /// Instantiates the configured defense for models of dimension `dim`.
    pub fn build(&self, eta: f64, dim: usize) -> Result<Box<dyn DefenseRule>> {
        self.validate(eta)?;
        Ok(match self.kind {
            DefenseKind::SecureAfl => Box::new(SecureAfl::new(self.secureafl(eta), self.variant)),
            DefenseKind::AsyncSgd => Box::new(AsyncSgd),
            DefenseKind::Kardam => Box::new(Kardam::new(self.clip_threshold)),
            DefenseKind::Basgd => Box::new(Basgd::new(BasgdState::new(self.buckets, dim)?)),
        })
    }

    /// Short label used in reports, e.g. `secureafl` or `secureafl-iv`.
    pub fn label(&self) -> String {
        match (self.kind, self.variant) {
            (DefenseKind::SecureAfl, Variant::Full) => "secureafl".into(),
            (DefenseKind::SecureAfl, v) => format!("secureafl-{}", format!("{v:?}").to_lowercase()),
            (DefenseKind::AsyncSgd, _) => "asyncsgd".into(),
            (DefenseKind::Kardam, _) => "kardam".into(),
            (DefenseKind::Basgd, _) => "basgd".into(),
        }
    }
}
