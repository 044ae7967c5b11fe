//! Discrete distribution utilities for the bound lab.

use crate::error::{CoreError, Result};

const DIST_TOL: f64 = 1e-9;

pub(crate) fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(CoreError::Distribution("empty distribution".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(CoreError::Distribution(
            "distribution entries must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(CoreError::Distribution(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Total variation distance: 0.5 * sum_i |p_i - q_i|.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    if p.len() != q.len() {
        return Err(CoreError::Distribution("support size mismatch".into()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// TV over raw arrays without normalization checks; internal helper for
/// sub-distributions arising in chain propagation.
pub(crate) fn tv_raw(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// KL divergence with the 0 log 0 = 0 convention. A support point with
/// p > 0 and q = 0 makes the divergence +infinity.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    if p.len() != q.len() {
        return Err(CoreError::Distribution("support size mismatch".into()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}
