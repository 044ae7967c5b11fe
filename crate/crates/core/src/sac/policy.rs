//! Squashed diagonal-Gaussian policy head.
//!
//! The network outputs (mean, raw log-std) per action dimension. The log-std
//! is soft-clamped into [LOG_STD_MIN, LOG_STD_MAX] through a tanh map (kept
//! smooth so gradient checks against finite differences stay valid), the
//! pre-squash sample is z = mean + std * noise, and actions are
//! center + half_range * tanh(z). Log-probabilities carry the change-of-
//! variables correction ln(half * (1 - tanh(z)^2) + eps) per dimension.

use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;

use m2ac_nn::{DenseArray, Mlp, MlpVars, Tape, Var};

use crate::error::Result;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;

/// Per-dimension affine map from tanh outputs to the action interval.
#[derive(Debug, Clone)]
pub struct ActionScaler {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
}

impl ActionScaler {
    pub fn new(low: &[f64], high: &[f64]) -> Self {
        Self {
            center: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

pub(crate) fn soft_clamped_log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0)
}

/// Pure sampled action with log-probability. `noise` is one standard-normal
/// draw per dimension.
pub(crate) fn sample_with_log_prob(
    mean: &[f64],
    raw_log_std: &[f64],
    noise: &[f64],
    scaler: &ActionScaler,
) -> (Vec<f64>, f64) {
    let mut action = Vec::with_capacity(mean.len());
    let mut log_prob = 0.0;
    for i in 0..mean.len() {
        let ls = soft_clamped_log_std(raw_log_std[i]);
        let std = ls.exp();
        let z = mean[i] + std * noise[i];
        let t = z.tanh();
        action.push(scaler.center[i] + scaler.half[i] * t);
        log_prob += -0.5 * noise[i] * noise[i]
            - ls
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - (scaler.half[i] * (1.0 - t * t) + SQUASH_EPS).ln();
    }
    (action, log_prob)
}

pub(crate) fn deterministic_action(mean: &[f64], scaler: &ActionScaler) -> Vec<f64> {
    mean.iter()
        .zip(scaler.center.iter().zip(&scaler.half))
        .map(|(m, (c, h))| c + h * m.tanh())
        .collect()
}

/// Draws a standard-normal noise matrix.
pub(crate) fn noise_matrix(n: usize, dim: usize, rng: &mut Pcg64) -> DenseArray {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let data: Vec<f64> = (0..n * dim).map(|_| normal.sample(rng)).collect();
    DenseArray::new(vec![n, dim], data).expect("finite noise")
}

/// Outcome of the taped reparameterized sampling pass.
pub(crate) struct TapedSample {
    /// Scaled actions, shape (n, action_dim).
    pub action: Var,
    /// Per-sample log pi(a|s), shape (n, 1).
    pub log_prob: Var,
}

/// Builds the reparameterized sample and its log-probability on the tape so
/// gradients flow into the policy parameters.
pub(crate) fn taped_sample(
    tape: &mut Tape,
    policy: &Mlp,
    policy_vars: &MlpVars,
    states: Var,
    noise: Var,
    scaler: &ActionScaler,
) -> Result<TapedSample> {
    let n = tape.value(states).dims2()?.0;
    let dim = scaler.dim();
    let out = policy.forward_tape(tape, policy_vars, states)?;
    let mean = tape.slice_cols(out, 0, dim)?;
    let raw = tape.slice_cols(out, dim, dim)?;

    // log_std = MIN + 0.5 (MAX - MIN) (tanh(raw) + 1)
    let t_raw = tape.tanh(raw)?;
    let scaled = tape.mul_scalar(t_raw, 0.5 * (LOG_STD_MAX - LOG_STD_MIN))?;
    let log_std = tape.add_scalar(scaled, LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN))?;
    let std = tape.exp(log_std)?;

    let scaled_noise = tape.mul(std, noise)?;
    let z = tape.add(mean, scaled_noise)?;

    // gaussian log-density of z under N(mean, std^2)
    let diff = tape.sub(z, mean)?;
    let ratio = tape.div(diff, std)?;
    let sq = tape.square(ratio)?;
    let half_sq = tape.mul_scalar(sq, -0.5)?;
    let minus_ls = tape.sub(half_sq, log_std)?;
    let gauss = tape.add_scalar(minus_ls, -0.5 * (2.0 * std::f64::consts::PI).ln())?;

    // squash and scale
    let t = tape.tanh(z)?;
    let half_tile = tape.leaf(tile_row(&scaler.half, n));
    let center_tile = tape.leaf(tile_row(&scaler.center, n));
    let scaled_t = tape.mul(t, half_tile)?;
    let action = tape.add(scaled_t, center_tile)?;

    // correction: ln(half (1 - tanh^2 z) + eps)
    let t_sq = tape.square(t)?;
    let neg_tsq = tape.neg(t_sq)?;
    let one_minus = tape.add_scalar(neg_tsq, 1.0)?;
    let jac = tape.mul(one_minus, half_tile)?;
    let jac_eps = tape.add_scalar(jac, SQUASH_EPS)?;
    let corr = tape.ln(jac_eps)?;

    let per_dim = tape.sub(gauss, corr)?;
    let log_prob = tape.row_sum(per_dim)?;
    Ok(TapedSample { action, log_prob })
}

pub(crate) fn tile_row(row: &[f64], n: usize) -> DenseArray {
    let mut data = Vec::with_capacity(n * row.len());
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    DenseArray::new(vec![n, row.len()], data).expect("finite tile")
}
