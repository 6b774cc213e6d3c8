//! The adversary.
//!
//! Data poisoning (label flipping, trigger embedding) rewrites malicious
//! shards once at setup. Update manipulation (sign flip, Gaussian noise,
//! scaling, Min-Max, adaptive) rewrites the upload every round. Min-Max and
//! the adaptive attack assume full knowledge: they see the benign updates of
//! the round and the defender's state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{gaussian_sample, mean, percentile, ParamVector, RngStream};
use crate::taskbench::{embed_trigger, Dataset, Label, Task, TriggerSpec};

/// Std of fabricated Gaussian updates.
pub const GAUSSIAN_ATTACK_STD: f64 = 200.0;
/// Binary-search iterations of the Min-Max attack.
pub const MINMAX_ITERATIONS: usize = 30;
/// Fraction of the filter threshold the adaptive attack spends.
pub const ADAPTIVE_MARGIN: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    #[default]
    None,
    LabelFlip,
    SignFlip,
    Gaussian,
    Scaling,
    MinMax,
    Adaptive,
}

impl AttackKind {
    /// Attacks that rewrite every upload of a malicious client.
    pub fn manipulates_updates(self) -> bool {
        matches!(
            self,
            AttackKind::SignFlip | AttackKind::Gaussian | AttackKind::Scaling | AttackKind::MinMax | AttackKind::Adaptive
        )
    }

    /// Attacks whose success is measured by ASR.
    pub fn is_targeted(self) -> bool {
        self == AttackKind::Scaling
    }

    pub fn needs_benign_snapshot(self) -> bool {
        matches!(self, AttackKind::MinMax | AttackKind::Adaptive)
    }
}

fn default_std() -> f64 {
    GAUSSIAN_ATTACK_STD
}
fn default_poison_fraction() -> f64 {
    0.5
}

/// Attack section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub kind: AttackKind,
    #[serde(default = "default_std")]
    pub gaussian_std: f64,
    /// Amplification of the scaling attack; defaults to the client count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_factor: Option<f64>,
    /// Backdoor pattern; defaults to [`default_trigger`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<TriggerSpec>,
    /// Share of a malicious shard that receives the trigger.
    #[serde(default = "default_poison_fraction")]
    pub poison_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            gaussian_std: default_std(),
            scaling_factor: None,
            trigger: None,
            poison_fraction: default_poison_fraction(),
        }
    }
}

impl AttackConfig {
    pub fn of(kind: AttackKind) -> Self {
        AttackConfig {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self, task: Task, feature_dim: usize) -> Result<()> {
        if !(self.gaussian_std >= 0.0) || !self.gaussian_std.is_finite() {
            return Err(Error::config("attack.gaussian_std", "must be finite and >= 0"));
        }
        if let Some(f) = self.scaling_factor {
            if !f.is_finite() {
                return Err(Error::config("attack.scaling_factor", "must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::config("attack.poison_fraction", "must lie in [0, 1]"));
        }
        let classification = matches!(task, Task::Classification { .. });
        if matches!(self.kind, AttackKind::LabelFlip | AttackKind::Scaling) && !classification {
            return Err(Error::config("attack.kind", "label flipping and backdoors need a classification task"));
        }
        if let Some(t) = &self.trigger {
            t.validate(feature_dim)
                .map_err(|e| Error::config("attack.trigger", e.to_string()))?;
            if let Task::Classification { classes } = task {
                if t.target_label >= classes {
                    return Err(Error::config("attack.trigger.target_label", "exceeds the class count"));
                }
            }
        }
        Ok(())
    }

    pub fn trigger_for(&self, feature_dim: usize) -> TriggerSpec {
        self.trigger.clone().unwrap_or_else(|| default_trigger(feature_dim))
    }
}

/// Two trailing features set to 4, target class 0.
pub fn default_trigger(feature_dim: usize) -> TriggerSpec {
    let indices: Vec<usize> = (feature_dim.saturating_sub(2)..feature_dim).collect();
    TriggerSpec {
        values: vec![4.0; indices.len()],
        indices,
        target_label: 0,
    }
}

/// Relabels every sample `y -> z - 1 - y`.
pub fn labelflip_poison(shard: &Dataset, classes: usize) -> Result<Dataset> {
    match shard.task() {
        Task::Classification { classes: z } if z == classes => {}
        Task::Classification { .. } => return Err(Error::TaskMismatch("class count mismatch")),
        Task::Regression => return Err(Error::TaskMismatch("label flipping needs a classification task")),
    }
    Ok(shard.map_samples(|s| {
        let mut out = s.clone();
        if let Label::Class(y) = s.label {
            out.label = Label::Class(classes - 1 - y);
        }
        out
    }))
}

/// Embeds the trigger (relabelled to the target) into a random
/// `fraction` of the shard.
pub fn trigger_poison(shard: &Dataset, trig: &TriggerSpec, fraction: f64, rng: &mut RngStream) -> Result<Dataset> {
    trig.validate(shard.feature_dim())?;
    let count = (fraction * shard.len() as f64).round() as usize;
    let mut chosen = vec![false; shard.len()];
    for i in rng.sample_indices(shard.len(), count) {
        chosen[i] = true;
    }
    let mut k = 0;
    let mut failure = None;
    let out = shard.map_samples(|s| {
        let hit = chosen[k];
        k += 1;
        if hit {
            match embed_trigger(s, trig, true) {
                Ok(p) => p,
                Err(e) => {
                    failure = Some(e);
                    s.clone()
                }
            }
        } else {
            s.clone()
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

pub fn signflip(g: &ParamVector) -> ParamVector {
    g.scale(-1.0)
}

/// Pure noise update with the given std.
pub fn gaussian_fabricate(d: usize, std: f64, rng: &mut RngStream) -> Result<ParamVector> {
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    gaussian_sample(rng, 0.0, std, d)
}

pub fn scaling_attack(g_poisoned: &ParamVector, factor: f64) -> ParamVector {
    g_poisoned.scale(factor)
}

/// What a full-knowledge adversary reads from the defender.
#[derive(Debug, Clone, Copy)]
pub struct DefenseView<'a> {
    /// The defender's Lipschitz log.
    pub lipschitz: &'a [f64],
    /// The attacker's previous upload as stored by the server.
    pub last_update: Option<&'a ParamVector>,
    /// Model the previous upload was computed on.
    pub w_old: Option<&'a ParamVector>,
    /// Model the current upload is computed on.
    pub w_new: &'a ParamVector,
}

/// Full-knowledge snapshot of one round.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub benign_updates: &'a [ParamVector],
    pub malicious_ids: &'a [usize],
    pub global_w: &'a ParamVector,
    pub defense_view: Option<DefenseView<'a>>,
}

fn flipped_mean_direction(benign: &[ParamVector]) -> Result<(ParamVector, ParamVector)> {
    let refs: Vec<&ParamVector> = benign.iter().collect();
    let m = mean(&refs)?;
    let norm = m.norm();
    let dir = if norm > 0.0 && norm.is_finite() {
        m.scale(-1.0 / norm)
    } else {
        let mut e = ParamVector::zeros(m.dim());
        e[0] = 1.0;
        e
    };
    Ok((m, dir))
}

/// Min-Max: push the benign mean along its own reverse direction as far as
/// possible while staying within the largest benign pairwise distance of
/// every benign update.
pub fn minmax_attack(ctx: &AttackContext<'_>) -> Result<ParamVector> {
    let benign = ctx.benign_updates;
    if benign.len() < 2 {
        return Err(Error::invalid("benign_updates", "Min-Max needs at least two benign updates"));
    }
    let (m, p) = flipped_mean_direction(benign)?;
    let tau = benign
        .iter()
        .enumerate()
        .flat_map(|(i, a)| benign[i + 1..].iter().map(move |b| a.distance(b)))
        .fold(0.0, f64::max);
    let feasible = |gamma: f64| {
        let cand = {
            let mut c = m.clone();
            c.axpy(gamma, &p);
            c
        };
        benign.iter().map(|g| cand.distance(g)).fold(0.0, f64::max) <= tau
    };
    let (mut lo, mut hi) = (0.0, 10.0 * tau);
    for _ in 0..MINMAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out = m;
    out.axpy(lo, &p);
    Ok(out)
}

/// Adaptive attack against the Lipschitz filter: move the previous upload
/// along the reversed benign mean by just under the filter's budget.
/// Falls back to [`minmax_attack`] when no filter state or previous upload
/// is available.
pub fn adaptive_attack(ctx: &AttackContext<'_>, alpha: f64) -> Result<ParamVector> {
    let view = match ctx.defense_view {
        Some(v) if !v.lipschitz.is_empty() => v,
        _ => return minmax_attack(ctx),
    };
    let (Some(g_old), Some(w_old)) = (view.last_update, view.w_old) else {
        return minmax_attack(ctx);
    };
    let theta = percentile(view.lipschitz, alpha)?;
    let budget = ADAPTIVE_MARGIN * theta * view.w_new.distance(w_old);
    let (_, p) = flipped_mean_direction(ctx.benign_updates)?;
    let mut out = g_old.clone();
    out.axpy(budget, &p);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskbench::Sample;

    fn v(x: &[f64]) -> ParamVector {
        ParamVector::from(x)
    }

    fn ctx<'a>(benign: &'a [ParamVector], w: &'a ParamVector) -> AttackContext<'a> {
        AttackContext {
            benign_updates: benign,
            malicious_ids: &[],
            global_w: w,
            defense_view: None,
        }
    }

    #[test]
    fn labelflip_examples() {
        let ds = Dataset::new(
            Task::Classification { classes: 10 },
            1,
            vec![Sample::classified(vec![0.5], 3)],
        )
        .unwrap();
        let flipped = labelflip_poison(&ds, 10).unwrap();
        assert_eq!(flipped.samples()[0].label, Label::Class(6));
        assert_eq!(flipped.samples()[0].features, vec![0.5]);
        assert_eq!(labelflip_poison(&flipped, 10).unwrap(), ds);

        let two = Dataset::new(
            Task::Classification { classes: 2 },
            1,
            vec![Sample::classified(vec![0.0], 0), Sample::classified(vec![0.0], 1)],
        )
        .unwrap();
        let f = labelflip_poison(&two, 2).unwrap();
        assert_eq!(f.samples()[0].label, Label::Class(1));
        assert_eq!(f.samples()[1].label, Label::Class(0));

        let reg = Dataset::new(Task::Regression, 1, vec![Sample::regressed(vec![0.0], 1.0)]).unwrap();
        assert!(labelflip_poison(&reg, 2).is_err());
    }

    #[test]
    fn signflip_examples() {
        assert_eq!(signflip(&v(&[1.0, -2.0])), v(&[-1.0, 2.0]));
        assert_eq!(signflip(&v(&[0.0])), v(&[-0.0]));
        let g = v(&[3.0, 4.0]);
        assert_eq!(signflip(&g).norm(), g.norm());
        assert_eq!(signflip(&signflip(&g)), g);
    }

    #[test]
    fn gaussian_fabrication_statistics() {
        let mut rng = RngStream::new(11);
        let g = gaussian_fabricate(10_000, GAUSSIAN_ATTACK_STD, &mut rng).unwrap();
        let n = g.dim() as f64;
        let m = g.iter().sum::<f64>() / n;
        let s = (g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((190.0..=210.0).contains(&s), "std {s}");
        assert!((-6.0..=6.0).contains(&m), "mean {m}");
        let again = gaussian_fabricate(10_000, GAUSSIAN_ATTACK_STD, &mut RngStream::new(11)).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn scaling_examples() {
        let g = v(&[1.0, 1.0]);
        assert_eq!(scaling_attack(&g, 1.0), g);
        assert_eq!(scaling_attack(&g, 10.0), v(&[10.0, 10.0]));
        assert!((scaling_attack(&g, 7.0).norm() - 7.0 * g.norm()).abs() < 1e-12);
    }

    #[test]
    fn minmax_degenerate_envelope() {
        let b = [v(&[1.0, 2.0]), v(&[1.0, 2.0])];
        let w = v(&[0.0, 0.0]);
        assert_eq!(minmax_attack(&ctx(&b, &w)).unwrap(), v(&[1.0, 2.0]));
    }

    #[test]
    fn minmax_two_point_example() {
        let b = [v(&[0.0, 0.0]), v(&[2.0, 0.0])];
        let w = v(&[0.0, 0.0]);
        let out = minmax_attack(&ctx(&b, &w)).unwrap();
        // gamma* = 1 moves (1, 0) to (0, 0)
        assert!(out.distance(&v(&[0.0, 0.0])) <= 1e-3 * 2.0, "{out:?}");
    }

    #[test]
    fn minmax_needs_two_updates() {
        let b = [v(&[0.0, 0.0])];
        let w = v(&[0.0, 0.0]);
        assert!(minmax_attack(&ctx(&b, &w)).is_err());
    }

    #[test]
    fn adaptive_without_motion_returns_previous() {
        let b = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let w = v(&[0.5, 0.5]);
        let g_old = v(&[3.0, -1.0]);
        let q = [1.0, 2.0, 3.0];
        let c = AttackContext {
            benign_updates: &b,
            malicious_ids: &[0],
            global_w: &w,
            defense_view: Some(DefenseView {
                lipschitz: &q,
                last_update: Some(&g_old),
                w_old: Some(&w),
                w_new: &w,
            }),
        };
        assert_eq!(adaptive_attack(&c, 0.8).unwrap(), g_old);
    }

    #[test]
    fn trigger_poison_fraction() {
        let samples = (0..10).map(|i| Sample::classified(vec![0.0, 0.0, i as f64], 1)).collect();
        let ds = Dataset::new(Task::Classification { classes: 2 }, 3, samples).unwrap();
        let trig = TriggerSpec {
            indices: vec![0],
            values: vec![9.0],
            target_label: 0,
        };
        let out = trigger_poison(&ds, &trig, 0.5, &mut RngStream::new(2)).unwrap();
        let hit = out.samples().iter().filter(|s| s.triggered).count();
        assert_eq!(hit, 5);
        assert!(out
            .samples()
            .iter()
            .filter(|s| s.triggered)
            .all(|s| s.label == Label::Class(0) && s.features[0] == 9.0));
    }
}
