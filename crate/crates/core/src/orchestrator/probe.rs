//! Convergence diagnostics computed from a run's per-round traces.
//!
//! The benign objective's squared gradient norm should fall and then level
//! off at a floor set by how far the aggregate strays from the benign
//! gradient (the tracking error). The floor used here is four times the
//! measured mean tracking error; the plateau passes when it stays within
//! ten times that floor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::metrics::RoundTrace;

/// Probe parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub window: usize,
    /// Rounds ignored before judging the estimation-error trend.
    pub warmup: usize,
    /// Windows that must form a non-increasing run after warm-up.
    pub min_trend_windows: usize,
    pub tau_max: usize,
}

impl ProbeSettings {
    pub fn new(tau_max: usize) -> Self {
        ProbeSettings {
            window: 100,
            warmup: 200,
            min_trend_windows: 4,
            tau_max,
        }
    }
}

/// Output of [`theory_probe`], written as `theory.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub settings: ProbeSettings,
    pub rounds: usize,
    /// Start round of each window.
    pub window_starts: Vec<usize>,
    pub grad_norm: Vec<Option<f64>>,
    pub rel_est_error: Vec<Option<f64>>,
    pub tracking_error: Vec<Option<f64>>,
    pub max_staleness: usize,
    pub staleness_within_bound: bool,
    /// Mean tracking error over the whole run.
    pub mean_tracking_error: f64,
    /// Mean squared benign gradient norm of the last window.
    pub grad_norm_plateau: f64,
    pub grad_norm_floor: f64,
    pub grad_norm_decreased: bool,
    pub plateau_within_floor: bool,
    pub tracking_bounded: bool,
    /// Longest non-increasing run of estimation-error windows after warm-up.
    pub rel_est_error_longest_nonincreasing: usize,
    pub rel_est_error_decreased: bool,
    pub rel_est_error_trend_holds: bool,
}

fn window_means(traces: &[RoundTrace], window: usize, pick: impl Fn(&RoundTrace) -> Option<f64>) -> Vec<Option<f64>> {
    traces
        .chunks(window)
        .map(|chunk| {
            let xs: Vec<f64> = chunk.iter().filter_map(&pick).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect()
}

/// Length of the longest run of consecutive defined values that never
/// increases.
pub fn longest_nonincreasing_run(values: &[Option<f64>]) -> usize {
    let mut best = 0;
    let mut current = 0;
    let mut prev: Option<f64> = None;
    for v in values {
        match (v, prev) {
            (Some(x), Some(p)) if *x <= p => current += 1,
            (Some(_), _) => current = 1,
            (None, _) => current = 0,
        }
        best = best.max(current);
        prev = *v;
    }
    best
}

pub fn theory_probe(traces: &[RoundTrace], settings: ProbeSettings) -> Result<TheoryReport> {
    if traces.is_empty() {
        return Err(Error::MissingTrace("per-round traces"));
    }
    if settings.window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if traces.iter().all(|t| t.grad_norm.is_none()) {
        return Err(Error::MissingTrace("grad_norm"));
    }
    if traces.iter().all(|t| t.tracking_error.is_none()) {
        return Err(Error::MissingTrace("tracking_error"));
    }
    let w = settings.window;
    let grad_norm = window_means(traces, w, |t| t.grad_norm);
    let tracking_error = window_means(traces, w, |t| t.tracking_error);
    let rel_est_error = window_means(traces, w, |t| t.rel_est_error);
    let window_starts: Vec<usize> = traces.chunks(w).map(|c| c[0].round).collect();

    let max_staleness = traces.iter().map(|t| t.staleness).max().unwrap_or(0);
    let tracked: Vec<f64> = traces.iter().filter_map(|t| t.tracking_error).collect();
    let mean_tracking_error = tracked.iter().sum::<f64>() / tracked.len() as f64;
    let defined_grad: Vec<f64> = grad_norm.iter().flatten().copied().collect();
    let grad_norm_plateau = *defined_grad.last().expect("grad_norm present");
    let grad_norm_floor = 4.0 * mean_tracking_error;
    let defined_track: Vec<f64> = tracking_error.iter().flatten().copied().collect();
    let tracking_bounded = defined_track.iter().all(|x| x.is_finite())
        && defined_track.last().copied().unwrap_or(0.0) <= 10.0 * defined_track[0].max(f64::MIN_POSITIVE);

    let post: Vec<Option<f64>> = window_starts
        .iter()
        .zip(&rel_est_error)
        .filter(|(s, _)| **s >= settings.warmup)
        .map(|(_, v)| *v)
        .collect();
    let longest = longest_nonincreasing_run(&post);
    let post_defined: Vec<f64> = post.iter().flatten().copied().collect();
    let rel_decreased = match (post_defined.first(), post_defined.last()) {
        (Some(first), Some(last)) if post_defined.len() >= 2 => last < first,
        _ => false,
    };

    Ok(TheoryReport {
        settings,
        rounds: traces.len(),
        window_starts,
        max_staleness,
        staleness_within_bound: max_staleness <= settings.tau_max,
        mean_tracking_error,
        grad_norm_plateau,
        grad_norm_floor,
        grad_norm_decreased: defined_grad.len() >= 2 && grad_norm_plateau < defined_grad[0],
        plateau_within_floor: grad_norm_plateau <= 10.0 * grad_norm_floor,
        tracking_bounded,
        rel_est_error_longest_nonincreasing: longest,
        rel_est_error_decreased: rel_decreased,
        rel_est_error_trend_holds: longest >= settings.min_trend_windows && rel_decreased,
        grad_norm,
        rel_est_error,
        tracking_error,
    })
}
