//! Order statistics used by the filter and the aggregators.

use crate::error::{Error, Result};
use crate::numkit::ParamVector;

/// Median of a scalar slice; even counts average the two middle values.
///
/// The slice is reordered in place.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .max_by(f64::total_cmp)
            .expect("non-empty lower half");
        0.5 * (lower + upper)
    }
}

/// Coordinate-wise median of a non-empty list of equally sized vectors.
pub fn coordinate_median(vs: &[&ParamVector]) -> Result<ParamVector> {
    let first = vs.first().ok_or(Error::Empty("coordinate median of no vectors"))?;
    let dim = first.dim();
    for v in vs {
        v.ensure_dim(dim)?;
    }
    let mut column = vec![0.0; vs.len()];
    let out = (0..dim)
        .map(|j| {
            for (slot, v) in column.iter_mut().zip(vs) {
                *slot = v[j];
            }
            median_in_place(&mut column)
        })
        .collect();
    Ok(out)
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(alpha * N)`
/// of the ascending sort.
pub fn percentile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no values"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1]")));
    }
    let n = values.len();
    // Guard against 0.8 * 5 = 4.000000000000001 style round-up.
    let raw = alpha * n as f64;
    let rank = ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).clamp(1, n);
    let mut sorted = values.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*kth)
}
