//! Baseline defenses: plain asynchronous SGD, a simplified Kardam-style
//! Lipschitz filter, and BASGD's bucketed median.

use crate::defense::secureafl::{commit, screen, ThresholdRule};
use crate::defense::{DefenseRule, LogPolicy, RoundDecision, Upload};
use crate::error::{Error, Result};
use crate::history::HistoryStore;
use crate::numkit::{coordinate_median, ParamVector};

/// Model delta `-eta * g` of an unfiltered asynchronous step.
pub fn asyncsgd_round(g: &ParamVector, eta: f64) -> ParamVector {
    g.scale(-eta)
}

/// No defense: every upload is applied as is.
#[derive(Debug, Clone, Copy, Default)]
pub struct AsyncSgd;

impl DefenseRule for AsyncSgd {
    fn name(&self) -> &'static str {
        "asyncsgd"
    }

    fn round(&mut self, upload: &Upload<'_>, hist: &mut HistoryStore) -> Result<RoundDecision> {
        let dim = hist.globals.fetch(upload.base_round)?.dim();
        upload.update.ensure_dim(dim)?;
        // anchors are kept for observers only
        if upload.update.is_finite() {
            commit(upload, upload.update.clone(), hist, false)?;
        }
        Ok(RoundDecision {
            accepted: true,
            lambda: None,
            threshold: None,
            aggregate: upload.update.clone(),
            estimates_used: 0,
            estimates: Vec::new(),
        })
    }
}

/// Kardam-style filter: accept when the Lipschitz factor is at most the
/// median of the log, then apply the update directly.
///
/// This is a reduced version of the original rule (no dampening, no
/// frequency filter).
#[derive(Debug, Clone)]
pub struct Kardam {
    clip_threshold: f64,
}

impl Kardam {
    pub fn new(clip_threshold: f64) -> Self {
        Kardam { clip_threshold }
    }
}

impl DefenseRule for Kardam {
    fn name(&self) -> &'static str {
        "kardam"
    }

    fn round(&mut self, upload: &Upload<'_>, hist: &mut HistoryStore) -> Result<RoundDecision> {
        let dim = hist.globals.fetch(upload.base_round)?.dim();
        if !upload.update.is_finite() {
            return Ok(RoundDecision::skip(dim));
        }
        let s = screen(
            upload,
            hist,
            self.clip_threshold,
            ThresholdRule::Median,
            LogPolicy::Always,
            true,
        )?;
        let aggregate = if s.accepted {
            s.update.clone()
        } else {
            ParamVector::zeros(dim)
        };
        commit(upload, s.update, hist, false)?;
        Ok(RoundDecision {
            accepted: s.accepted,
            lambda: s.lambda,
            threshold: s.threshold,
            aggregate,
            estimates_used: 0,
            estimates: Vec::new(),
        })
    }
}

/// BASGD buffers: client `i` feeds bucket `i mod B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasgdState {
    sums: Vec<ParamVector>,
    counts: Vec<usize>,
}

impl BasgdState {
    pub fn new(buckets: usize, dim: usize) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::invalid("buckets", "must be at least 1"));
        }
        Ok(BasgdState {
            sums: vec![ParamVector::zeros(dim); buckets],
            counts: vec![0; buckets],
        })
    }

    pub fn buckets(&self) -> usize {
        self.counts.len()
    }

    pub fn bucket_of(&self, client: usize) -> usize {
        client % self.buckets()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Adds `g` to the client's bucket. Once every bucket is non-empty,
    /// returns the coordinate-wise median of the bucket means and resets.
    pub fn push(&mut self, client: usize, g: &ParamVector) -> Result<Option<ParamVector>> {
        let b = self.bucket_of(client);
        g.ensure_dim(self.sums[b].dim())?;
        self.sums[b].axpy(1.0, g);
        self.counts[b] += 1;
        if self.counts.contains(&0) {
            return Ok(None);
        }
        let means: Vec<ParamVector> = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &c)| s.scale(1.0 / c as f64))
            .collect();
        let refs: Vec<&ParamVector> = means.iter().collect();
        let median = coordinate_median(&refs)?;
        let dim = median.dim();
        self.sums.iter_mut().for_each(|s| *s = ParamVector::zeros(dim));
        self.counts.iter_mut().for_each(|c| *c = 0);
        Ok(Some(median))
    }
}

/// Global-model delta of one BASGD round, `None` while buckets are filling.
pub fn basgd_round(client: usize, g: &ParamVector, state: &mut BasgdState, eta: f64) -> Result<Option<ParamVector>> {
    Ok(state.push(client, g)?.map(|m| m.scale(-eta)))
}

#[derive(Debug, Clone)]
pub struct Basgd {
    state: BasgdState,
}

impl Basgd {
    pub fn new(state: BasgdState) -> Self {
        Basgd { state }
    }
}

impl DefenseRule for Basgd {
    fn name(&self) -> &'static str {
        "basgd"
    }

    fn round(&mut self, upload: &Upload<'_>, hist: &mut HistoryStore) -> Result<RoundDecision> {
        let dim = hist.globals.fetch(upload.base_round)?.dim();
        if !upload.update.is_finite() {
            return Ok(RoundDecision::skip(dim));
        }
        let emitted = self.state.push(upload.client, upload.update)?;
        commit(upload, upload.update.clone(), hist, false)?;
        Ok(RoundDecision {
            accepted: true,
            lambda: None,
            threshold: None,
            aggregate: emitted.unwrap_or_else(|| ParamVector::zeros(dim)),
            estimates_used: 0,
            estimates: Vec::new(),
        })
    }
}
