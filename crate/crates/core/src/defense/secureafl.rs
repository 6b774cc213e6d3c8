use crate::defense::{
    clip_l2, lipschitz_factor, DefenseRule, LogPolicy, RoundDecision, SecantSource, SecureAflConfig, Upload, Variant,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_update, secant_pair_is_usable};
use crate::history::HistoryStore;
use crate::numkit::{coordinate_median, mean, median_in_place, percentile, ParamVector};

#[derive(Debug, Clone, Copy)]
pub(crate) enum ThresholdRule {
    Percentile(f64),
    Median,
}

impl ThresholdRule {
    fn apply(self, values: &[f64]) -> Result<f64> {
        match self {
            ThresholdRule::Percentile(alpha) => percentile(values, alpha),
            ThresholdRule::Median => {
                if values.is_empty() {
                    return Err(Error::Empty("median of no values"));
                }
                Ok(median_in_place(&mut values.to_vec()))
            }
        }
    }
}

/// Outcome of the Lipschitz screen for one upload.
#[derive(Debug, Clone)]
pub(crate) struct Screened {
    pub accepted: bool,
    pub lambda: Option<f64>,
    pub threshold: Option<f64>,
    /// The update as the server keeps it (clipped on first contact).
    pub update: ParamVector,
}

/// First contact: clip and accept. Otherwise compute the Lipschitz factor
/// against the client's previous upload, log it and compare it with the
/// threshold of the log. `enforce = false` still logs but always accepts.
pub(crate) fn screen(
    upload: &Upload<'_>,
    hist: &mut HistoryStore,
    clip_threshold: f64,
    rule: ThresholdRule,
    policy: LogPolicy,
    enforce: bool,
) -> Result<Screened> {
    let w_base = hist.globals.fetch(upload.base_round)?.clone();
    upload.update.ensure_dim(w_base.dim())?;
    let record = hist.record(upload.client)?;

    if !record.ever_seen || upload.round == 0 {
        return Ok(Screened {
            accepted: true,
            lambda: None,
            threshold: None,
            update: clip_l2(upload.update, clip_threshold)?,
        });
    }

    let w_prev = hist.globals.fetch(record.last_base_round)?;
    let lambda = lipschitz_factor(upload.update, &record.last_update, &w_base, w_prev)?;

    let (accepted, threshold) = if lambda.is_finite() {
        let mut candidate = hist.lipschitz.values().to_vec();
        candidate.push(lambda);
        let threshold = rule.apply(&candidate)?;
        let accepted = lambda <= threshold;
        if policy == LogPolicy::Always || accepted {
            hist.lipschitz.push(lambda)?;
        }
        (accepted, Some(threshold))
    } else {
        let threshold = if hist.lipschitz.is_empty() {
            None
        } else {
            Some(rule.apply(hist.lipschitz.values())?)
        };
        (false, threshold)
    };

    Ok(Screened {
        accepted: accepted || !enforce,
        lambda: Some(lambda),
        threshold,
        update: upload.update.clone(),
    })
}

/// Stores the upload as the client's new anchor, first pushing the secant
/// pair it forms with the previous anchor when that pair has positive
/// curvature.
pub(crate) fn commit(upload: &Upload<'_>, update: ParamVector, hist: &mut HistoryStore, push_secant: bool) -> Result<()> {
    let record = hist.record(upload.client)?;
    if push_secant && record.ever_seen {
        let dw = hist.globals.delta_w(upload.base_round, record.last_base_round)?;
        let dg = update.sub(&record.last_update);
        if secant_pair_is_usable(&dw, &dg) {
            hist.buffers.push_diffs(upload.client, dw, dg)?;
        }
    }
    hist.record_mut(upload.client)?.update(update, upload.base_round);
    Ok(())
}

/// The full defense or one of its ablations.
#[derive(Debug, Clone)]
pub struct SecureAfl {
    cfg: SecureAflConfig,
    variant: Variant,
}

impl SecureAfl {
    pub fn new(cfg: SecureAflConfig, variant: Variant) -> Self {
        SecureAfl { cfg, variant }
    }

    pub fn config(&self) -> &SecureAflConfig {
        &self.cfg
    }
}

impl DefenseRule for SecureAfl {
    fn name(&self) -> &'static str {
        match self.variant {
            Variant::Full => "secureafl",
            Variant::I => "secureafl-i",
            Variant::II => "secureafl-ii",
            Variant::III => "secureafl-iii",
            Variant::IV => "secureafl-iv",
        }
    }

    fn round(&mut self, upload: &Upload<'_>, hist: &mut HistoryStore) -> Result<RoundDecision> {
        variant_round(self.variant, upload, hist, &self.cfg)
    }
}

/// One server round of the full defense: screen, estimate the other seen
/// clients, median-aggregate.
pub fn secureafl_round(upload: &Upload<'_>, hist: &mut HistoryStore, cfg: &SecureAflConfig) -> Result<RoundDecision> {
    variant_round(Variant::Full, upload, hist, cfg)
}

/// One server round of the requested variant.
pub fn variant_round(
    variant: Variant,
    upload: &Upload<'_>,
    hist: &mut HistoryStore,
    cfg: &SecureAflConfig,
) -> Result<RoundDecision> {
    let dim = hist
        .globals
        .fetch(upload.base_round)
        .map_err(|_| Error::UnknownBaseModel(upload.base_round))?
        .dim();
    if !upload.update.is_finite() {
        return Ok(RoundDecision::skip(dim));
    }
    let current = hist.globals.latest_round().ok_or(Error::UnknownBaseModel(upload.round))?;
    if current != upload.round {
        return Err(Error::UnknownBaseModel(upload.round));
    }

    let screened = screen(
        upload,
        hist,
        cfg.clip_threshold,
        ThresholdRule::Percentile(cfg.alpha),
        cfg.log_policy,
        variant != Variant::III,
    )?;

    if variant == Variant::II {
        let aggregate = if screened.accepted {
            screened.update.clone()
        } else {
            ParamVector::zeros(dim)
        };
        commit(upload, screened.update, hist, true)?;
        return Ok(RoundDecision {
            accepted: screened.accepted,
            lambda: screened.lambda,
            threshold: screened.threshold,
            aggregate,
            estimates_used: 0,
            estimates: Vec::new(),
        });
    }

    let others: Vec<usize> = hist.seen_clients().filter(|&k| k != upload.client).collect();
    let mut estimates = Vec::with_capacity(others.len());
    let mut recursive_pairs = Vec::new();
    for &k in &others {
        let est = estimate_update(k, upload.round, hist, cfg.ridge)?;
        if cfg.secant_source == SecantSource::Recursive {
            let rec = hist.record(k)?;
            let dw = hist.globals.delta_w(upload.round, rec.last_base_round)?;
            let dg = est.estimate.sub(&rec.last_update);
            recursive_pairs.push((k, dw, dg));
        }
        estimates.push((k, est.estimate));
    }

    let include_received = screened.accepted && variant != Variant::IV;
    let mut inputs: Vec<&ParamVector> = estimates.iter().map(|(_, e)| e).collect();
    if include_received {
        inputs.push(&screened.update);
    }
    let aggregate = if inputs.is_empty() {
        ParamVector::zeros(dim)
    } else if variant == Variant::I {
        mean(&inputs)?
    } else {
        coordinate_median(&inputs)?
    };

    for (k, dw, dg) in recursive_pairs {
        if secant_pair_is_usable(&dw, &dg) {
            hist.buffers.push_diffs(k, dw, dg)?;
        }
    }
    commit(upload, screened.update, hist, true)?;

    Ok(RoundDecision {
        accepted: screened.accepted,
        lambda: screened.lambda,
        threshold: screened.threshold,
        aggregate,
        estimates_used: estimates.len(),
        estimates,
    })
}
