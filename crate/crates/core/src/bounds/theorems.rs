//! Exact verification of the return and Q-value bounds on finite MDPs.
//!
//! Everything is computed by linear solves over the state-action space, so
//! the only tolerance in play is the 1e-9 slack allowed for accumulated
//! floating-point error. Infinite discounted series are evaluated exactly as
//! resolvent solves, never by truncation; where a report also carries a
//! truncated series for inspection, the analytic tail is added to keep the
//! checked inequality sound.

use serde::Serialize;

use super::dist::tv_raw;
use super::lemmas::check_shared_spaces;
use crate::env::{exact_policy_value, FiniteMdp, TabularPolicy};
use crate::error::{CoreError, Result};
use crate::linalg;

/// Slack tolerance for every verified inequality.
pub const SLACK_TOL: f64 = 1e-9;

/// Binary mask over state-action pairs: 1 = the model may be used here.
#[derive(Debug, Clone)]
pub struct MaskTable {
    n_states: usize,
    n_actions: usize,
    mask: Vec<u8>,
}

impl MaskTable {
    pub fn new(n_states: usize, n_actions: usize, mask: Vec<u8>) -> Result<Self> {
        if mask.len() != n_states * n_actions {
            return Err(CoreError::Invalid("mask table size mismatch".into()));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(CoreError::Invalid("mask entries must be binary".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            mask,
        })
    }

    pub fn all_ones(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            mask: vec![1; n_states * n_actions],
        }
    }

    pub fn all_zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            mask: vec![0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> bool {
        self.mask[s * self.n_actions + a] == 1
    }

    pub fn set(&mut self, s: usize, a: usize, value: bool) {
        self.mask[s * self.n_actions + a] = value as u8;
    }

    pub fn masked_in_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Pair kernel K[(s,a) -> (s',a')] = p(s'|s,a) pi(a'|s') flattened row-major.
fn pair_kernel(mdp: &FiniteMdp, pol: &TabularPolicy) -> Vec<f64> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let dim = n * m;
    let mut k = vec![0.0; dim * dim];
    for s in 0..n {
        for a in 0..m {
            let row = mdp.row(s, a);
            let i = s * m + a;
            for s2 in 0..n {
                if row[s2] == 0.0 {
                    continue;
                }
                for a2 in 0..m {
                    k[i * dim + s2 * m + a2] = row[s2] * pol.prob(s2, a2);
                }
            }
        }
    }
    k
}

/// Max transition TV over masked-in pairs (zero if the mask is empty).
pub fn masked_epsilon(mdp: &FiniteMdp, model: &FiniteMdp, mask: &MaskTable) -> f64 {
    let mut eps = 0.0f64;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if mask.get(s, a) {
                eps = eps.max(tv_raw(mdp.row(s, a), model.row(s, a)));
            }
        }
    }
    eps
}

/// Max |r - r_model| over masked-in pairs; zero when the reward is shared.
pub fn masked_reward_epsilon(mdp: &FiniteMdp, model: &FiniteMdp, mask: &MaskTable) -> f64 {
    let mut eps = 0.0f64;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if mask.get(s, a) {
                eps = eps.max((mdp.reward(s, a) - model.reward(s, a)).abs());
            }
        }
    }
    eps
}

/// Exact Q of the masked rollout process: before the first masked-out pair
/// the chain follows (model dynamics, model reward); at the first pair with
/// mask = 0 it is absorbed into the true process, contributing Q^pi exactly.
pub fn masked_q_exact(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
    mask: &MaskTable,
) -> Result<Vec<f64>> {
    check_shared_spaces(mdp, model)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let dim = n * m;
    let gamma = mdp.gamma();
    let q_true = exact_policy_value(mdp, pol)?.q;
    let k_model = pair_kernel(model, pol);

    // (I - C) q = b with C nonzero only on masked rows
    let mut a_mat = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    for s in 0..n {
        for a in 0..m {
            let i = s * m + a;
            a_mat[i * dim + i] = 1.0;
            if mask.get(s, a) {
                b[i] = model.reward(s, a);
                for j in 0..dim {
                    a_mat[i * dim + j] -= gamma * k_model[i * dim + j];
                }
            } else {
                b[i] = q_true[i];
            }
        }
    }
    linalg::solve(&a_mat, &b, dim)
}

/// Discounted masked-survival weights: for each start pair (s,a),
/// sum_t gamma^t w(t; s,a) where w(t) = Pr{the rollout is still
/// model-driven at step t}. Solved exactly via (I - gamma T D) z = 1,
/// S = M .* z, with T the model pair kernel and D = diag(mask).
pub fn discounted_mask_weights(
    model: &FiniteMdp,
    pol: &TabularPolicy,
    mask: &MaskTable,
) -> Result<Vec<f64>> {
    let n = model.n_states();
    let m = model.n_actions();
    let dim = n * m;
    let gamma = model.gamma();
    let k_model = pair_kernel(model, pol);

    let mut a_mat = vec![0.0; dim * dim];
    for i in 0..dim {
        a_mat[i * dim + i] = 1.0;
        for j in 0..dim {
            let (s2, a2) = (j / m, j % m);
            if mask.get(s2, a2) {
                a_mat[i * dim + j] -= gamma * k_model[i * dim + j];
            }
        }
    }
    let z = linalg::solve(&a_mat, &vec![1.0; dim], dim)?;
    Ok((0..dim)
        .map(|i| if mask.get(i / m, i % m) { z[i] } else { 0.0 })
        .collect())
}

/// w(t; s,a) for t = 0..horizon, exact propagation; used for report dumps
/// and the [0,1]-range invariant.
pub fn mask_weight_sequence(
    model: &FiniteMdp,
    pol: &TabularPolicy,
    mask: &MaskTable,
    start: (usize, usize),
    horizon: usize,
) -> Result<Vec<f64>> {
    let n = model.n_states();
    let m = model.n_actions();
    let dim = n * m;
    let k_model = pair_kernel(model, pol);
    let masked = |i: usize| mask.get(i / m, i % m);

    let mut alive = vec![0.0; dim];
    let i0 = start.0 * m + start.1;
    if masked(i0) {
        alive[i0] = 1.0;
    }
    let mut ws = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        ws.push(alive.iter().sum());
        let mut next = vec![0.0; dim];
        for i in 0..dim {
            if alive[i] == 0.0 {
                continue;
            }
            for j in 0..dim {
                if k_model[i * dim + j] != 0.0 && masked(j) {
                    next[j] += alive[i] * k_model[i * dim + j];
                }
            }
        }
        alive = next;
    }
    Ok(ws)
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub j_true: f64,
    pub j_model: f64,
    /// TV between the two initial distributions (the t = 0 series term).
    pub delta0: f64,
    /// Exact sum_{t>=1} gamma^t delta^(t) under the model-side occupancy.
    pub delta_series_from_t1: f64,
    /// Extra penalty when the model reward table differs from the real one.
    pub reward_gap_term: f64,
    /// RHS with the series starting at t = 1.
    pub rhs_t1: f64,
    /// RHS with the series starting at t = 0 (includes delta0); this looser
    /// form is the one asserted.
    pub rhs_t0: f64,
    pub slack_t1: f64,
    pub slack_t0: f64,
    pub holds: bool,
}

/// Return bound for model-based policy iteration:
/// J(pi) >= J_model(pi) - (2 r_max / (1-gamma)) sum_t gamma^t delta^(t),
/// with delta^(t) the expected transition TV under the state-action
/// occupancy of pi in the MODEL. Both series indexings (t>=1 and t>=0 with
/// delta^(0) = TV(p0, p0_model)) are computed; the t>=0 form is asserted.
///
/// When the model's reward table differs, J_model is computed with the model
/// reward and the bound gains max|r - r_model| / (1-gamma).
pub fn verify_theorem1(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
) -> Result<Theorem1Report> {
    check_shared_spaces(mdp, model)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let dim = n * m;
    let gamma = mdp.gamma();

    let pv_true = exact_policy_value(mdp, pol)?;
    let pv_model = exact_policy_value(model, pol)?;
    let j_true: f64 = mdp.initial().iter().zip(&pv_true.v).map(|(p, v)| p * v).sum();
    let j_model: f64 = model
        .initial()
        .iter()
        .zip(&pv_model.v)
        .map(|(p, v)| p * v)
        .sum();

    // discounted model-side occupancy: (I - gamma K^T) mu = rho_0
    let k_model = pair_kernel(model, pol);
    let mut a_mat = vec![0.0; dim * dim];
    for i in 0..dim {
        a_mat[i * dim + i] = 1.0;
        for j in 0..dim {
            // transpose of the kernel
            a_mat[i * dim + j] -= gamma * k_model[j * dim + i];
        }
    }
    let mut rho0 = vec![0.0; dim];
    for s in 0..n {
        for a in 0..m {
            rho0[s * m + a] = model.initial()[s] * pol.prob(s, a);
        }
    }
    let mu = linalg::solve(&a_mat, &rho0, dim)?;

    let mut weighted_tv = 0.0;
    let mut reward_gap = 0.0f64;
    for s in 0..n {
        for a in 0..m {
            let i = s * m + a;
            weighted_tv += mu[i] * tv_raw(mdp.row(s, a), model.row(s, a));
            reward_gap = reward_gap.max((mdp.reward(s, a) - model.reward(s, a)).abs());
        }
    }
    // delta^(t) is an expectation over the occupancy at t-1, so the series
    // sum_{t>=1} gamma^t delta^(t) equals gamma * (tv-weighted occupancy)
    let delta_series_from_t1 = gamma * weighted_tv;
    let delta0 = 0.5_f64
        * mdp
            .initial()
            .iter()
            .zip(model.initial())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();

    let coef = 2.0 * mdp.r_max() / (1.0 - gamma);
    let reward_gap_term = reward_gap / (1.0 - gamma);
    let rhs_t1 = j_model - coef * delta_series_from_t1 - reward_gap_term;
    let rhs_t0 = j_model - coef * (delta0 + delta_series_from_t1) - reward_gap_term;
    let slack_t1 = j_true - rhs_t1;
    let slack_t0 = j_true - rhs_t0;
    Ok(Theorem1Report {
        j_true,
        j_model,
        delta0,
        delta_series_from_t1,
        reward_gap_term,
        rhs_t1,
        rhs_t0,
        slack_t1,
        slack_t0,
        holds: slack_t0 >= -SLACK_TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Report {
    /// Max masked transition TV.
    pub epsilon: f64,
    /// Max masked reward error (zero for a shared reward table).
    pub epsilon_reward: f64,
    /// alpha = 2 r_max / (1 - gamma).
    pub alpha_coef: f64,
    pub q_true: Vec<f64>,
    pub q_mask: Vec<f64>,
    /// Exact sum_t gamma^t w(t; s,a) per pair.
    pub discounted_w: Vec<f64>,
    /// First steps of w(t) at the worst pair, for inspection.
    pub w_head: Vec<f64>,
    /// Min over pairs of Q - (Q_mask - (alpha eps + eps_r) S).
    pub one_sided_min_slack: f64,
    /// Min over pairs of (alpha eps + eps_r) S - |Q - Q_mask|.
    pub two_sided_min_slack: f64,
    pub holds: bool,
}

/// Q-value bound for masked model rollouts:
///   Q(s,a) >= Q_mask(s,a) - alpha eps sum_t gamma^t w(t; s,a)
/// plus the two-sided form
///   |Q - Q_mask| <= (alpha eps + eps_r) sum_t gamma^t w(t; s,a),
/// where eps is the max masked transition TV, eps_r the max masked reward
/// error, and alpha = 2 r_max / (1 - gamma).
pub fn verify_theorem2(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
    mask: &MaskTable,
) -> Result<Theorem2Report> {
    check_shared_spaces(mdp, model)?;
    let m = mdp.n_actions();
    let gamma = mdp.gamma();
    let epsilon = masked_epsilon(mdp, model, mask);
    let epsilon_reward = masked_reward_epsilon(mdp, model, mask);
    let alpha_coef = 2.0 * mdp.r_max() / (1.0 - gamma);

    let q_true = exact_policy_value(mdp, pol)?.q;
    let q_mask = masked_q_exact(mdp, model, pol, mask)?;
    let discounted_w = discounted_mask_weights(model, pol, mask)?;

    let pen = alpha_coef * epsilon + epsilon_reward;
    let mut one_sided = f64::INFINITY;
    let mut two_sided = f64::INFINITY;
    let mut worst_pair = (0usize, 0usize);
    let mut worst = -f64::INFINITY;
    for i in 0..q_true.len() {
        let gap = q_true[i] - q_mask[i];
        let budget = pen * discounted_w[i];
        one_sided = one_sided.min(gap + budget);
        two_sided = two_sided.min(budget - gap.abs());
        if gap.abs() > worst {
            worst = gap.abs();
            worst_pair = (i / m, i % m);
        }
    }
    let w_head = mask_weight_sequence(model, pol, mask, worst_pair, 32)?;

    Ok(Theorem2Report {
        epsilon,
        epsilon_reward,
        alpha_coef,
        q_true,
        q_mask,
        discounted_w,
        w_head,
        one_sided_min_slack: one_sided,
        two_sided_min_slack: two_sided,
        holds: one_sided >= -SLACK_TOL && two_sided >= -SLACK_TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorollaryReport {
    /// Penalty subtracted on masked pairs (theorem form: alpha eps + eps_r).
    pub penalty: f64,
    pub q_m2ac: Vec<f64>,
    /// Min over pairs of Q^pi - Q_m2ac (must be >= -tol).
    pub min_slack: f64,
    pub holds: bool,
    /// Violation count for the per-sample-penalty variant, when a u-table
    /// was supplied. Empirical only, not part of `holds`.
    pub per_sample_violations: Option<usize>,
    pub per_sample_min_slack: Option<f64>,
}

/// Fixed point of the two-branch recursion: on masked pairs the chain uses
/// (model dynamics, model reward - penalty); on unmasked pairs it uses the
/// real dynamics and reward. The fixed point must lower-bound Q^pi when the
/// penalty is the theorem's alpha * eps (+ the reward-error term).
pub fn q_m2ac_exact(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
    mask: &MaskTable,
    penalty: &dyn Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    check_shared_spaces(mdp, model)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let dim = n * m;
    let gamma = mdp.gamma();
    let k_true = pair_kernel(mdp, pol);
    let k_model = pair_kernel(model, pol);

    let mut a_mat = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    for s in 0..n {
        for a in 0..m {
            let i = s * m + a;
            a_mat[i * dim + i] += 1.0;
            let kernel = if mask.get(s, a) { &k_model } else { &k_true };
            for j in 0..dim {
                a_mat[i * dim + j] -= gamma * kernel[i * dim + j];
            }
            b[i] = if mask.get(s, a) {
                model.reward(s, a) - penalty(s, a)
            } else {
                mdp.reward(s, a)
            };
        }
    }
    linalg::solve(&a_mat, &b, dim)
}

/// Checks Q_m2ac <= Q^pi under the theorem penalty, and optionally reports
/// (without asserting) how often the per-sample-u penalty variant violates.
pub fn verify_corollary1(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
    mask: &MaskTable,
    u_table: Option<(&[f64], f64)>,
) -> Result<CorollaryReport> {
    let epsilon = masked_epsilon(mdp, model, mask);
    let epsilon_reward = masked_reward_epsilon(mdp, model, mask);
    let alpha_coef = 2.0 * mdp.r_max() / (1.0 - mdp.gamma());
    let penalty = alpha_coef * epsilon + epsilon_reward;

    let q_true = exact_policy_value(mdp, pol)?.q;
    let q_m2ac = q_m2ac_exact(mdp, model, pol, mask, &|_, _| penalty)?;
    let min_slack = q_true
        .iter()
        .zip(&q_m2ac)
        .map(|(qt, qm)| qt - qm)
        .fold(f64::INFINITY, f64::min);

    let (per_sample_violations, per_sample_min_slack) = match u_table {
        Some((u, alpha_u)) => {
            if u.len() != q_true.len() {
                return Err(CoreError::Invalid("u-table size mismatch".into()));
            }
            let m = mdp.n_actions();
            let q_u = q_m2ac_exact(mdp, model, pol, mask, &|s, a| alpha_u * u[s * m + a])?;
            let mut violations = 0usize;
            let mut min_s = f64::INFINITY;
            for (qt, qu) in q_true.iter().zip(&q_u) {
                let slack = qt - qu;
                min_s = min_s.min(slack);
                if slack < -SLACK_TOL {
                    violations += 1;
                }
            }
            (Some(violations), Some(min_s))
        }
        None => (None, None),
    };

    Ok(CorollaryReport {
        penalty,
        q_m2ac,
        min_slack,
        holds: min_slack >= -SLACK_TOL,
        per_sample_violations,
        per_sample_min_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::sweep::{random_instance, InstanceParams};
    use rand::Rng;

    fn test_instance(seed: u64) -> crate::bounds::sweep::VerificationInstance {
        let mut rng = crate::rng::stream(seed, "theorem-tests");
        random_instance(&mut rng, &InstanceParams::default())
    }

    #[test]
    fn mask_all_zeros_recovers_true_q() {
        let inst = test_instance(0);
        let mask = MaskTable::all_zeros(inst.mdp.n_states(), inst.mdp.n_actions());
        let q_mask = masked_q_exact(&inst.mdp, &inst.model, &inst.policy, &mask).unwrap();
        let q_true = exact_policy_value(&inst.mdp, &inst.policy).unwrap().q;
        for (a, b) in q_mask.iter().zip(&q_true) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mask_all_ones_with_exact_model_recovers_true_q() {
        let inst = test_instance(1);
        let mask = MaskTable::all_ones(inst.mdp.n_states(), inst.mdp.n_actions());
        let q_mask = masked_q_exact(&inst.mdp, &inst.mdp, &inst.policy, &mask).unwrap();
        let q_true = exact_policy_value(&inst.mdp, &inst.policy).unwrap().q;
        for (a, b) in q_mask.iter().zip(&q_true) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_q_matches_monte_carlo_switching_rollouts() {
        let mut rng = crate::rng::stream(5, "mc-masked");
        let inst = random_instance(
            &mut rng,
            &InstanceParams {
                gamma_range: (0.8, 0.8),
                ..InstanceParams::default()
            },
        );
        let q_mask = masked_q_exact(&inst.mdp, &inst.model, &inst.policy, &inst.mask).unwrap();

        // Monte-Carlo oracle of the switching process from one start pair
        let (s0, a0) = (0usize, 0usize);
        let m = inst.mdp.n_actions();
        let episodes = 1_000_000;
        let horizon = 90; // gamma^90 * rmax / (1-gamma) is negligible
        let mut total = 0.0;
        let mut totalsq = 0.0;
        for _ in 0..episodes {
            let mut s = s0;
            let mut a = a0;
            let mut switched = false;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                if !switched && !inst.mask.get(s, a) {
                    switched = true;
                }
                let (mdp_now, reward_now) = if switched {
                    (&inst.mdp, inst.mdp.reward(s, a))
                } else {
                    (&inst.model, inst.model.reward(s, a))
                };
                ret += disc * reward_now;
                disc *= inst.mdp.gamma();
                // sample next state and action
                let row = mdp_now.row(s, a);
                let mut u: f64 = rng.gen_range(0.0..1.0);
                let mut s2 = row.len() - 1;
                for (i, &p) in row.iter().enumerate() {
                    if u < p {
                        s2 = i;
                        break;
                    }
                    u -= p;
                }
                let prow = inst.policy.row(s2);
                let mut v: f64 = rng.gen_range(0.0..1.0);
                let mut a2 = m - 1;
                for (i, &p) in prow.iter().enumerate() {
                    if v < p {
                        a2 = i;
                        break;
                    }
                    v -= p;
                }
                s = s2;
                a = a2;
            }
            total += ret;
            totalsq += ret * ret;
        }
        let mc_mean = total / episodes as f64;
        let mc_var = totalsq / episodes as f64 - mc_mean * mc_mean;
        let sem = (mc_var / episodes as f64).sqrt();
        let exact = q_mask[s0 * m + a0];
        assert!(
            (exact - mc_mean).abs() < 3.0 * sem + 1e-3,
            "exact {exact} vs MC {mc_mean} (sem {sem})"
        );
    }

    #[test]
    fn exact_model_gives_zero_epsilon_and_tight_bound() {
        let inst = test_instance(2);
        let mask = MaskTable::all_ones(inst.mdp.n_states(), inst.mdp.n_actions());
        let rep = verify_theorem2(&inst.mdp, &inst.mdp, &inst.policy, &mask).unwrap();
        assert_eq!(rep.epsilon, 0.0);
        assert!(rep.holds);
        // Q >= Q_mask with equality when the model is exact
        for (qt, qm) in rep.q_true.iter().zip(&rep.q_mask) {
            assert!((qt - qm).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_restricted_to_exact_pair_gives_zero_epsilon_despite_bad_model() {
        // model is badly wrong everywhere except pair (0, 0)
        let inst = test_instance(3);
        let mut model = inst.model.clone();
        model.set_row(0, 0, inst.mdp.row(0, 0).to_vec()).unwrap();
        model.set_reward(0, 0, inst.mdp.reward(0, 0)).unwrap();
        let mut mask = MaskTable::all_zeros(inst.mdp.n_states(), inst.mdp.n_actions());
        mask.set(0, 0, true);
        let rep = verify_theorem2(&inst.mdp, &model, &inst.policy, &mask).unwrap();
        assert!(rep.epsilon < 1e-15, "epsilon {}", rep.epsilon);
        assert!(rep.holds);
        // global model error is large even though the masked error is zero
        let global_eps = masked_epsilon(
            &inst.mdp,
            &model,
            &MaskTable::all_ones(inst.mdp.n_states(), inst.mdp.n_actions()),
        );
        assert!(global_eps > 0.01);
    }

    #[test]
    fn theorem1_exact_model_gives_equal_returns() {
        let inst = test_instance(4);
        let rep = verify_theorem1(&inst.mdp, &inst.mdp, &inst.policy).unwrap();
        assert!((rep.j_true - rep.j_model).abs() < 1e-10);
        assert!(rep.delta_series_from_t1.abs() < 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn theorem1_single_state_reward_gap_structure() {
        // one state, one action; model shares the transition (trivially) and
        // the reward, so J = J_model and the bound is tight
        let mdp =
            crate::env::FiniteMdp::new(1, 1, vec![1.0], vec![0.7], vec![1.0], 0.9, 1.0).unwrap();
        let pol = TabularPolicy::uniform(1, 1);
        let rep = verify_theorem1(&mdp, &mdp, &pol).unwrap();
        assert!((rep.j_true - 7.0).abs() < 1e-9);
        assert!((rep.slack_t0 - 0.0).abs() < 1e-9);
        assert!(rep.holds);
    }

    #[test]
    fn corollary_empty_mask_equals_true_q() {
        let inst = test_instance(6);
        let mask = MaskTable::all_zeros(inst.mdp.n_states(), inst.mdp.n_actions());
        let rep = verify_corollary1(&inst.mdp, &inst.model, &inst.policy, &mask, None).unwrap();
        let q_true = exact_policy_value(&inst.mdp, &inst.policy).unwrap().q;
        for (qm, qt) in rep.q_m2ac.iter().zip(&q_true) {
            assert!((qm - qt).abs() < 1e-9);
        }
        assert!(rep.holds);
    }

    #[test]
    fn corollary_zero_error_zero_penalty_sits_on_the_boundary() {
        let inst = test_instance(7);
        let mask = MaskTable::all_ones(inst.mdp.n_states(), inst.mdp.n_actions());
        // model = real MDP, so epsilon = 0 and the penalty vanishes
        let rep = verify_corollary1(&inst.mdp, &inst.mdp, &inst.policy, &mask, None).unwrap();
        assert_eq!(rep.penalty, 0.0);
        let q_mask = masked_q_exact(&inst.mdp, &inst.mdp, &inst.policy, &mask).unwrap();
        for (a, b) in rep.q_m2ac.iter().zip(&q_mask) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(rep.min_slack.abs() < 1e-9);
    }

    #[test]
    fn mask_weights_are_probabilities() {
        let inst = test_instance(8);
        for s in 0..inst.mdp.n_states() {
            for a in 0..inst.mdp.n_actions() {
                let ws =
                    mask_weight_sequence(&inst.model, &inst.policy, &inst.mask, (s, a), 40)
                        .unwrap();
                for (t, w) in ws.iter().enumerate() {
                    assert!(
                        (0.0..=1.0 + 1e-12).contains(w),
                        "w({t}; {s},{a}) = {w} out of range"
                    );
                }
                // survival probabilities cannot increase
                for t in 1..ws.len() {
                    assert!(ws[t] <= ws[t - 1] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn discounted_weights_match_truncated_series() {
        let inst = test_instance(9);
        let exact = discounted_mask_weights(&inst.model, &inst.policy, &inst.mask).unwrap();
        let gamma = inst.mdp.gamma();
        let m = inst.mdp.n_actions();
        let horizon = 2000; // gamma^2000 is far below 1e-12 for gamma <= 0.95
        for s in 0..inst.mdp.n_states() {
            for a in 0..m {
                let ws = mask_weight_sequence(&inst.model, &inst.policy, &inst.mask, (s, a), horizon)
                    .unwrap();
                let series: f64 = ws
                    .iter()
                    .enumerate()
                    .map(|(t, w)| gamma.powi(t as i32) * w)
                    .sum();
                assert!(
                    (series - exact[s * m + a]).abs() < 1e-8,
                    "pair ({s},{a}): series {series} vs exact {}",
                    exact[s * m + a]
                );
            }
        }
    }

    #[test]
    fn monotone_tightening_when_masking_out_worst_pairs() {
        // flipping the highest-error masked pairs to 0 never increases
        // epsilon or the theorem-2 budget at any pair
        let inst = test_instance(10);
        let n = inst.mdp.n_states();
        let m = inst.mdp.n_actions();
        let mut mask = MaskTable::all_ones(n, m);
        let mut pairs: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|s| (0..m).map(move |a| (s, a)))
            .map(|(s, a)| (s, a, tv_raw(inst.mdp.row(s, a), inst.model.row(s, a))))
            .collect();
        pairs.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap());

        let mut prev_eps = f64::INFINITY;
        let mut prev_budget = f64::INFINITY;
        for step in 0..pairs.len() {
            let eps = masked_epsilon(&inst.mdp, &inst.model, &mask);
            let ws = discounted_mask_weights(&inst.model, &inst.policy, &mask).unwrap();
            let alpha = 2.0 * inst.mdp.r_max() / (1.0 - inst.mdp.gamma());
            let budget = ws.iter().map(|w| alpha * eps * w).fold(0.0, f64::max);
            assert!(eps <= prev_eps + 1e-12);
            assert!(budget <= prev_budget + 1e-9);
            prev_eps = eps;
            prev_budget = budget;
            let (s, a, _) = pairs[step];
            mask.set(s, a, false);
        }
    }
}
