use crate::error::{Error, Result};
use crate::numkit::ParamVector;

/// Rescales `g` onto the radius-`threshold` ball when it lies outside.
pub fn clip_l2(g: &ParamVector, threshold: f64) -> Result<ParamVector> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::invalid("clip_threshold", format!("{threshold} must be finite and > 0")));
    }
    let norm = crate::numkit::l2_norm(g)?;
    if norm <= threshold {
        Ok(g.clone())
    } else {
        Ok(g.scale(threshold / norm))
    }
}

/// `||g_new - g_old|| / ||w_new - w_old||`.
///
/// A vanishing model difference yields `0` when the updates also agree and
/// `+inf` otherwise; `+inf` is always rejected by the filter.
pub fn lipschitz_factor(
    g_new: &ParamVector,
    g_old: &ParamVector,
    w_new: &ParamVector,
    w_old: &ParamVector,
) -> Result<f64> {
    g_old.ensure_dim(g_new.dim())?;
    w_old.ensure_dim(w_new.dim())?;
    if ![g_new, g_old, w_new, w_old].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let num = g_new.distance(g_old);
    let den = w_new.distance(w_old);
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}
