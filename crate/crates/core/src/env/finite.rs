//! Exact tabular MDPs and policy evaluation.
//!
//! These are the substrate for the bound-verification lab: everything here
//! is solved to machine precision (linear solves, not sampling).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg;

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with dense transition tensor `p[s][a][s']`, reward table
/// `r[s][a]` bounded by `r_max`, initial distribution, and discount.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(CoreError::Invalid("empty state/action space".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(CoreError::Invalid(format!(
                "discount must be in (0,1), got {gamma}"
            )));
        }
        if transition.len() != n_states * n_actions * n_states
            || reward.len() != n_states * n_actions
            || initial.len() != n_states
        {
            return Err(CoreError::Invalid("table size mismatch".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                if row.iter().any(|&p| !(0.0..=1.0 + ROW_SUM_TOL).contains(&p)) {
                    return Err(CoreError::Distribution(format!(
                        "p[{s}][{a}] has entries outside [0,1]"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(CoreError::Distribution(format!(
                        "p[{s}][{a}] sums to {sum}, not 1"
                    )));
                }
            }
        }
        let p0_sum: f64 = initial.iter().sum();
        if (p0_sum - 1.0).abs() > ROW_SUM_TOL || initial.iter().any(|&p| p < 0.0) {
            return Err(CoreError::Distribution("initial distribution invalid".into()));
        }
        if !(r_max > 0.0) || reward.iter().any(|&r| r.abs() >= r_max) {
            return Err(CoreError::Invalid(
                "rewards must satisfy |r| < r_max".into(),
            ));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial,
            gamma,
            r_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Next-state distribution for (s, a).
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    /// Replaces one transition row (revalidated).
    pub fn set_row(&mut self, s: usize, a: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.n_states {
            return Err(CoreError::Invalid("row length mismatch".into()));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
            return Err(CoreError::Distribution("replacement row invalid".into()));
        }
        let base = (s * self.n_actions + a) * self.n_states;
        self.transition[base..base + self.n_states].copy_from_slice(&row);
        Ok(())
    }

    pub fn set_reward(&mut self, s: usize, a: usize, r: f64) -> Result<()> {
        if r.abs() >= self.r_max {
            return Err(CoreError::Invalid("|r| must stay below r_max".into()));
        }
        self.reward[s * self.n_actions + a] = r;
        Ok(())
    }
}

/// Stochastic tabular policy pi[s][a].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(CoreError::Invalid("policy table size mismatch".into()));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..][..n_actions];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(CoreError::Distribution(format!(
                    "pi[{s}] is not a distribution"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..][..self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Exact V and Q for a policy.
#[derive(Debug, Clone)]
pub struct PolicyValue {
    pub v: Vec<f64>,
    /// q[s * n_actions + a]
    pub q: Vec<f64>,
}

fn check_compatible(mdp: &FiniteMdp, pol: &TabularPolicy) -> Result<()> {
    if pol.n_states != mdp.n_states || pol.n_actions != mdp.n_actions {
        return Err(CoreError::Invalid(
            "policy dimensions do not match MDP".into(),
        ));
    }
    Ok(())
}

/// Solves the Bellman fixed point (I - gamma P_pi) V = r_pi exactly and
/// verifies the residual is below 1e-10.
pub fn exact_policy_value(mdp: &FiniteMdp, pol: &TabularPolicy) -> Result<PolicyValue> {
    check_compatible(mdp, pol)?;
    let n = mdp.n_states;
    let m = mdp.n_actions;

    // state-to-state kernel and state reward under pi
    let mut a_mat = vec![0.0; n * n];
    let mut r_pi = vec![0.0; n];
    for s in 0..n {
        for a in 0..m {
            let pa = pol.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            r_pi[s] += pa * mdp.reward(s, a);
            let row = mdp.row(s, a);
            for s2 in 0..n {
                a_mat[s * n + s2] -= mdp.gamma * pa * row[s2];
            }
        }
        a_mat[s * n + s] += 1.0;
    }
    let v = linalg::solve(&a_mat, &r_pi, n)?;

    let mut q = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            let row = mdp.row(s, a);
            let ev: f64 = row.iter().zip(&v).map(|(p, v)| p * v).sum();
            q[s * m + a] = mdp.reward(s, a) + mdp.gamma * ev;
        }
    }

    // Bellman residual check
    for s in 0..n {
        let qv: f64 = (0..m).map(|a| pol.prob(s, a) * q[s * m + a]).sum();
        if (qv - v[s]).abs() > 1e-10 {
            return Err(CoreError::Invalid(format!(
                "Bellman residual {} above 1e-10",
                (qv - v[s]).abs()
            )));
        }
    }
    Ok(PolicyValue { v, q })
}

/// J(pi) = sum_s p0(s) V(s).
pub fn exact_return(mdp: &FiniteMdp, pol: &TabularPolicy) -> Result<f64> {
    let pv = exact_policy_value(mdp, pol)?;
    Ok(mdp.initial().iter().zip(&pv.v).map(|(p, v)| p * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn single_state_mdp(r: f64, gamma: f64) -> FiniteMdp {
        FiniteMdp::new(1, 1, vec![1.0], vec![r], vec![1.0], gamma, 10.0).unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state_mdp(1.0, 0.5);
        let pol = TabularPolicy::uniform(1, 1);
        let pv = exact_policy_value(&mdp, &pol).unwrap();
        assert!((pv.v[0] - 2.0).abs() < 1e-12);
        assert!((pv.q[0] - 2.0).abs() < 1e-12);
        assert!((exact_return(&mdp, &pol).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_zero_value() {
        let mdp = FiniteMdp::new(
            2,
            2,
            vec![
                1.0, 0.0, 0.5, 0.5, //
                0.25, 0.75, 0.0, 1.0,
            ],
            vec![0.0; 4],
            vec![0.5, 0.5],
            0.9,
            1.0,
        )
        .unwrap();
        let pol = TabularPolicy::uniform(2, 2);
        let pv = exact_policy_value(&mdp, &pol).unwrap();
        assert!(pv.v.iter().all(|v| v.abs() < 1e-12));
        assert!(pv.q.iter().all(|q| q.abs() < 1e-12));
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        assert!(FiniteMdp::new(1, 1, vec![1.0], vec![0.5], vec![1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(FiniteMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.9, 1.0).is_err());
        assert!(TabularPolicy::new(1, 2, vec![0.7, 0.7]).is_err());
    }

    pub(crate) fn random_mdp(
        rng: &mut impl Rng,
        n: usize,
        m: usize,
        gamma: f64,
        r_max: f64,
    ) -> FiniteMdp {
        let mut transition = Vec::with_capacity(n * m * n);
        for _ in 0..n * m {
            let mut row: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0f64..1.0).ln()).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            transition.extend(row);
        }
        let reward: Vec<f64> = (0..n * m)
            .map(|_| rng.gen_range(-0.9 * r_max..0.9 * r_max))
            .collect();
        let mut initial: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0f64..1.0).ln()).collect();
        let s: f64 = initial.iter().sum();
        initial.iter_mut().for_each(|p| *p /= s);
        FiniteMdp::new(n, m, transition, reward, initial, gamma, r_max).unwrap()
    }

    #[test]
    fn matches_power_iteration_oracle() {
        let mut rng = crate::rng::stream(2024, "finite-test");
        for _ in 0..5 {
            let mdp = random_mdp(&mut rng, 5, 3, 0.9, 4.0);
            let mut probs = Vec::new();
            for _ in 0..5 {
                let mut row: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
                probs.extend(row);
            }
            let pol = TabularPolicy::new(5, 3, probs).unwrap();
            let pv = exact_policy_value(&mdp, &pol).unwrap();

            // brute-force oracle: 10^4 sweeps of V <- r_pi + gamma P_pi V
            let mut v = vec![0.0; 5];
            for _ in 0..10_000 {
                let mut next = vec![0.0; 5];
                for s in 0..5 {
                    for a in 0..3 {
                        let pa = pol.prob(s, a);
                        let ev: f64 = mdp.row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                        next[s] += pa * (mdp.reward(s, a) + 0.9 * ev);
                    }
                }
                v = next;
            }
            for (exact, oracle) in pv.v.iter().zip(&v) {
                assert!((exact - oracle).abs() < 1e-8, "{exact} vs {oracle}");
            }
        }
    }

    #[test]
    fn return_agrees_with_truncated_simulation() {
        let mut rng = crate::rng::stream(11, "finite-sim");
        let mdp = random_mdp(&mut rng, 4, 2, 0.8, 2.0);
        let pol = TabularPolicy::uniform(4, 2);
        let j = exact_return(&mdp, &pol).unwrap();

        // truncated-horizon expectation: propagate exact state distribution
        let horizon = {
            let mut t = 0usize;
            while 0.8f64.powi(t as i32) * 2.0 / 0.2 >= 1e-6 {
                t += 1;
            }
            t
        };
        let mut dist = mdp.initial().to_vec();
        let mut j_trunc = 0.0;
        for t in 0..horizon {
            let mut step_reward = 0.0;
            let mut next = vec![0.0; 4];
            for s in 0..4 {
                for a in 0..2 {
                    let w = dist[s] * pol.prob(s, a);
                    step_reward += w * mdp.reward(s, a);
                    for (s2, p) in mdp.row(s, a).iter().enumerate() {
                        next[s2] += w * p;
                    }
                }
            }
            j_trunc += 0.8f64.powi(t as i32) * step_reward;
            dist = next;
        }
        assert!((j - j_trunc).abs() < 1e-5, "{j} vs {j_trunc}");
    }

    #[test]
    fn uniform_initial_over_two_states_averages_values() {
        // two absorbing states with rewards 0.5 and 1.5, gamma 0.5 -> V = (1, 3)
        let mdp = FiniteMdp::new(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.5, 1.5],
            vec![0.5, 0.5],
            0.5,
            2.0,
        )
        .unwrap();
        let pol = TabularPolicy::uniform(2, 1);
        let pv = exact_policy_value(&mdp, &pol).unwrap();
        assert!((pv.v[0] - 1.0).abs() < 1e-12);
        assert!((pv.v[1] - 3.0).abs() < 1e-12);
        assert!((exact_return(&mdp, &pol).unwrap() - 2.0).abs() < 1e-12);
    }
}
