//! Reconstruction of the updates of clients that did not upload this round.
//!
//! A missing update is predicted from the client's last real update `g_k^v`
//! by a first-order correction `g_k^v + H (w^t - w^v)`, where the Hessian
//! product comes from the compact limited-memory BFGS representation built
//! on the client's stored secant pairs.

use crate::error::{Error, Result};
use crate::history::HistoryStore;
use crate::numkit::{solve_dense, DenseMatrix, ParamVector};

/// Ridge added to the compact system before solving.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// An `H dw` longer than this many times `max ||dg|| / ||dw||` over the
/// stored pairs, times `||dw||`, is treated as an ill-conditioned solve.
///
/// Nearly parallel secant steps with slightly inconsistent curvature make
/// the compact system close to singular without tripping the pivot check;
/// the product then explodes in directions the pairs never observed.
pub const CURVATURE_GUARD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub estimate: ParamVector,
    pub fallback_used: bool,
    /// `H dw`; zero on fallback.
    pub hvp: ParamVector,
}

/// Compact L-BFGS Hessian-vector product.
///
/// `phi` and `pi` hold the model and update differences oldest first. The
/// initial scaling `mu` comes from the `(dw_prev, dg_prev)` pair; the
/// `2s x 2s` middle matrix is `[[-D, L^T], [L, mu Phi^T Phi]]` with `D` the
/// diagonal and `L` the strictly lower triangle of `Phi^T Pi`.
pub fn lbfgs_hvp(
    phi: &[&ParamVector],
    pi: &[&ParamVector],
    dg_prev: &ParamVector,
    dw_prev: &ParamVector,
    dw: &ParamVector,
    ridge: f64,
) -> Result<ParamVector> {
    let s = phi.len();
    if s == 0 {
        return Err(Error::Empty("secant buffer"));
    }
    if pi.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            actual: pi.len(),
        });
    }
    let d = dw.dim();
    for v in phi.iter().chain(pi).chain([&dg_prev, &dw_prev]) {
        v.ensure_dim(d)?;
    }

    let ww = dw_prev.dot(dw_prev);
    if ww == 0.0 || !ww.is_finite() {
        return Err(Error::DegenerateCurvature);
    }
    let mu = dg_prev.dot(dw_prev) / ww;
    if !mu.is_finite() {
        return Err(Error::DegenerateCurvature);
    }

    let mut m = DenseMatrix::zeros(2 * s, 2 * s);
    for i in 0..s {
        for j in 0..s {
            let y = phi[i].dot(pi[j]);
            if i == j {
                m[(i, i)] = -y;
            } else if i > j {
                // L in the lower-left block, L^T in the upper-right block
                m[(s + i, j)] = y;
                m[(j, s + i)] = y;
            }
            m[(s + i, s + j)] = mu * phi[i].dot(phi[j]);
        }
    }
    let rhs: Vec<f64> = pi
        .iter()
        .map(|p| p.dot(dw))
        .chain(phi.iter().map(|f| mu * f.dot(dw)))
        .collect();
    let l = solve_dense(&m, &rhs, ridge)?;

    let mut out = dw.scale(mu);
    for j in 0..s {
        out.axpy(-l[j], pi[j]);
        out.axpy(-mu * l[s + j], phi[j]);
    }
    out.checked().map_err(|_| Error::SingularSystem)
}

/// Whether a secant pair carries usable positive curvature.
pub fn secant_pair_is_usable(dw: &ParamVector, dg: &ParamVector) -> bool {
    let ww = dw.dot(dw);
    let wg = dw.dot(dg);
    dw.is_finite() && dg.is_finite() && ww > 0.0 && wg > 0.0 && wg.is_finite()
}

/// Estimates client `k`'s update at round `t` from its anchor and secant
/// buffers; falls back to the anchor itself when no usable curvature exists.
pub fn estimate_update(k: usize, t: usize, hist: &HistoryStore, ridge: f64) -> Result<EstimationResult> {
    let rec = hist.record(k)?;
    if !rec.ever_seen {
        return Err(Error::NoAnchor(k));
    }
    let anchor = &rec.last_update;
    let dw = hist.globals.delta_w(t, rec.last_base_round)?;
    let fallback = || EstimationResult {
        estimate: anchor.clone(),
        fallback_used: true,
        hvp: ParamVector::zeros(anchor.dim()),
    };

    let (phi, pi) = hist.buffers.pairs(k);
    let (Some(dw_prev), Some(dg_prev)) = (phi.last(), pi.last()) else {
        return Ok(fallback());
    };
    match lbfgs_hvp(&phi, &pi, dg_prev, dw_prev, &dw, ridge) {
        Ok(hvp) => {
            let estimate = anchor.add(&hvp);
            if !estimate.is_finite() || hvp.norm() > CURVATURE_GUARD * observed_curvature(&phi, &pi) * dw.norm() {
                return Ok(fallback());
            }
            Ok(EstimationResult {
                estimate,
                fallback_used: false,
                hvp,
            })
        }
        Err(Error::DegenerateCurvature | Error::SingularSystem | Error::NonFinite) => Ok(fallback()),
        Err(e) => Err(e),
    }
}

/// Largest `||dg|| / ||dw||` over the stored pairs.
fn observed_curvature(phi: &[&ParamVector], pi: &[&ParamVector]) -> f64 {
    phi.iter()
        .zip(pi)
        .map(|(dw, dg)| dg.norm() / dw.norm())
        .filter(|c| c.is_finite())
        .fold(0.0, f64::max)
}

/// `||estimate - truth|| / ||truth||`.
pub fn relative_estimation_error(estimate: &ParamVector, truth: &ParamVector) -> Result<f64> {
    estimate.ensure_dim(truth.dim())?;
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    Ok(estimate.distance(truth) / denom)
}
