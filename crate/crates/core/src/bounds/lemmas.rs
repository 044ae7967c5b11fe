//! Exact verification of the three supporting lemmas on finite instances:
//! the joint-distribution TV decomposition, the one-step Markov-chain TV
//! recursion, and the truncated return gap between two (policy, dynamics)
//! pairs.

use serde::Serialize;

use super::dist::{tv_distance, tv_raw, validate_distribution};
use crate::env::{FiniteMdp, TabularPolicy};
use crate::error::{CoreError, Result};

pub const SLACK_TOL: f64 = 1e-12;

/// Joint distribution over a finite product space, row-major p[x][y].
#[derive(Debug, Clone)]
pub struct JointDistribution {
    pub nx: usize,
    pub ny: usize,
    pub probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(nx: usize, ny: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != nx * ny {
            return Err(CoreError::Distribution("joint table size mismatch".into()));
        }
        validate_distribution(&probs)?;
        Ok(Self { nx, ny, probs })
    }

    fn marginal_x(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|x| self.probs[x * self.ny..(x + 1) * self.ny].iter().sum())
            .collect()
    }

    /// Conditional p(y|x); uniform where the marginal carries no mass.
    fn conditional(&self, x: usize, marginal: f64) -> Vec<f64> {
        if marginal > 0.0 {
            self.probs[x * self.ny..(x + 1) * self.ny]
                .iter()
                .map(|p| p / marginal)
                .collect()
        } else {
            vec![1.0 / self.ny as f64; self.ny]
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// TV(p(x,y), q(x,y)) <= TV(p(x), q(x)) + E_{x~q}[TV(p(y|x), q(y|x))].
pub fn verify_lemma1(p: &JointDistribution, q: &JointDistribution) -> Result<Lemma1Report> {
    if p.nx != q.nx || p.ny != q.ny {
        return Err(CoreError::Distribution("joint support mismatch".into()));
    }
    let lhs = tv_raw(&p.probs, &q.probs);
    let pm = p.marginal_x();
    let qm = q.marginal_x();
    let mut rhs = tv_raw(&pm, &qm);
    for x in 0..p.nx {
        if qm[x] == 0.0 {
            // zero-probability conditionals contribute nothing
            continue;
        }
        let pc = p.conditional(x, pm[x]);
        let qc = q.conditional(x, qm[x]);
        rhs += qm[x] * tv_raw(&pc, &qc);
    }
    let slack = rhs - lhs;
    Ok(Lemma1Report {
        lhs,
        rhs,
        slack,
        holds: slack >= -SLACK_TOL,
    })
}

/// State-to-state kernel induced by a policy: k(s'|s) = sum_a pi(a|s) p(s'|s,a).
pub(crate) fn state_kernel(mdp: &FiniteMdp, pol: &TabularPolicy) -> Vec<f64> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut k = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..m {
            let pa = pol.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (s2, p) in mdp.row(s, a).iter().enumerate() {
                k[s * n + s2] += pa * p;
            }
        }
    }
    k
}

fn propagate(dist: &[f64], kernel: &[f64], n: usize) -> Vec<f64> {
    let mut next = vec![0.0; n];
    for s in 0..n {
        if dist[s] == 0.0 {
            continue;
        }
        for s2 in 0..n {
            next[s2] += dist[s] * kernel[s * n + s2];
        }
    }
    next
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma2Report {
    pub min_step_slack: f64,
    pub steps_checked: usize,
    pub holds: bool,
}

/// One-step TV recursion for two Markov chains:
/// TV(p_{t+1}, q_{t+1}) <= TV(p_t, q_t) + E_{x~q_t}[TV(p(.|x), q(.|x))],
/// checked at every step up to the horizon.
pub fn verify_lemma2(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
    pol_model: &TabularPolicy,
    horizon: usize,
) -> Result<Lemma2Report> {
    check_shared_spaces(mdp, model)?;
    let n = mdp.n_states();
    let k_true = state_kernel(mdp, pol);
    let k_model = state_kernel(model, pol_model);

    let mut d_true = mdp.initial().to_vec();
    let mut d_model = model.initial().to_vec();
    let mut min_slack = f64::INFINITY;
    for _ in 0..horizon {
        let next_true = propagate(&d_true, &k_true, n);
        let next_model = propagate(&d_model, &k_model, n);
        let lhs = tv_raw(&next_true, &next_model);
        let mut rhs = tv_raw(&d_true, &d_model);
        for s in 0..n {
            if d_model[s] == 0.0 {
                continue;
            }
            rhs += d_model[s] * tv_raw(&k_true[s * n..(s + 1) * n], &k_model[s * n..(s + 1) * n]);
        }
        min_slack = min_slack.min(rhs - lhs);
        d_true = next_true;
        d_model = next_model;
    }
    Ok(Lemma2Report {
        min_step_slack: min_slack,
        steps_checked: horizon,
        holds: min_slack >= -SLACK_TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma3Report {
    pub j_true: f64,
    pub j_model: f64,
    pub gap: f64,
    pub d_tv_max_policies: f64,
    pub delta0: f64,
    pub delta_series: f64,
    pub rhs: f64,
    pub slack: f64,
    pub horizon: usize,
    pub holds: bool,
}

/// Truncated return gap between running pi in p and pi~ in p~:
/// |J_T - J~_T| <= 2 r_max (Dmax/(1-gamma)^2 + (1/(1-gamma)) sum_t gamma^t delta^(t)).
pub fn verify_lemma3(
    mdp: &FiniteMdp,
    model: &FiniteMdp,
    pol: &TabularPolicy,
    pol_model: &TabularPolicy,
    horizon: usize,
) -> Result<Lemma3Report> {
    check_shared_spaces(mdp, model)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let gamma = mdp.gamma();
    let r_max = mdp.r_max().max(model.r_max());
    let k_true = state_kernel(mdp, pol);
    let k_model = state_kernel(model, pol_model);

    // max_s TV between the two policies
    let mut d_tv_max = 0.0f64;
    for s in 0..n {
        d_tv_max = d_tv_max.max(tv_raw(pol.row(s), pol_model.row(s)));
    }

    let delta0 = tv_distance(mdp.initial(), model.initial())?;

    let mut d_true = mdp.initial().to_vec();
    let mut d_model = model.initial().to_vec();
    let mut j_true = 0.0;
    let mut j_model = 0.0;
    let mut delta_series = delta0; // t = 0 term enters at gamma^0
    let mut discount = 1.0;
    for t in 0..=horizon {
        // expected step rewards under each (policy, dynamics) pair; the
        // reward function is shared (it is part of the task, not the model)
        let mut r_t = 0.0;
        let mut r_mt = 0.0;
        for s in 0..n {
            for a in 0..m {
                r_t += d_true[s] * pol.prob(s, a) * mdp.reward(s, a);
                r_mt += d_model[s] * pol_model.prob(s, a) * mdp.reward(s, a);
            }
        }
        j_true += discount * r_t;
        j_model += discount * r_mt;

        if t < horizon {
            // delta^(t+1): expected transition TV under the model-side
            // state-action occupancy at time t
            let mut delta = 0.0;
            for s in 0..n {
                if d_model[s] == 0.0 {
                    continue;
                }
                for a in 0..m {
                    let pa = pol_model.prob(s, a);
                    if pa == 0.0 {
                        continue;
                    }
                    delta += d_model[s] * pa * tv_raw(mdp.row(s, a), model.row(s, a));
                }
            }
            delta_series += discount * gamma * delta;
        }

        d_true = propagate(&d_true, &k_true, n);
        d_model = propagate(&d_model, &k_model, n);
        discount *= gamma;
    }

    let gap = (j_true - j_model).abs();
    let rhs = 2.0 * r_max
        * (d_tv_max / ((1.0 - gamma) * (1.0 - gamma)) + delta_series / (1.0 - gamma));
    let slack = rhs - gap;
    Ok(Lemma3Report {
        j_true,
        j_model,
        gap,
        d_tv_max_policies: d_tv_max,
        delta0,
        delta_series,
        rhs,
        slack,
        horizon,
        holds: slack >= -SLACK_TOL,
    })
}

pub(crate) fn check_shared_spaces(a: &FiniteMdp, b: &FiniteMdp) -> Result<()> {
    if a.n_states() != b.n_states() || a.n_actions() != b.n_actions() {
        return Err(CoreError::Invalid(
            "MDPs must share state and action spaces".into(),
        ));
    }
    if (a.gamma() - b.gamma()).abs() > 1e-15 {
        return Err(CoreError::Invalid("MDPs must share the discount".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::sweep::{random_instance, InstanceParams};

    #[test]
    fn lemma1_identical_joints() {
        let j = JointDistribution::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let rep = verify_lemma1(&j, &j).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn lemma1_shared_conditional_reduces_to_marginal_tv() {
        // p(y|x) identical; different marginals
        let cond = [0.3, 0.7];
        let build = |mx: [f64; 2]| {
            JointDistribution::new(
                2,
                2,
                vec![
                    mx[0] * cond[0],
                    mx[0] * cond[1],
                    mx[1] * cond[0],
                    mx[1] * cond[1],
                ],
            )
            .unwrap()
        };
        let p = build([0.5, 0.5]);
        let q = build([0.2, 0.8]);
        let rep = verify_lemma1(&p, &q).unwrap();
        let marginal_tv = 0.5 * ((0.5f64 - 0.2).abs() + (0.5f64 - 0.8).abs());
        assert!((rep.rhs - marginal_tv).abs() < 1e-15);
        assert!(rep.lhs <= marginal_tv + 1e-15);
        assert!(rep.holds);
    }

    #[test]
    fn lemma2_identical_chains_have_full_slack() {
        let mut rng = crate::rng::stream(0, "lemma2");
        let inst = random_instance(&mut rng, &InstanceParams::default());
        let rep = verify_lemma2(&inst.mdp, &inst.mdp, &inst.policy, &inst.policy, 30).unwrap();
        assert!(rep.holds);
        assert!(rep.min_step_slack >= 0.0);
    }

    #[test]
    fn lemma3_same_everything_gives_zero_gap() {
        let mut rng = crate::rng::stream(1, "lemma3");
        let inst = random_instance(&mut rng, &InstanceParams::default());
        let rep = verify_lemma3(&inst.mdp, &inst.mdp, &inst.policy, &inst.policy, 50).unwrap();
        assert!(rep.gap.abs() < 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn lemma3_same_policy_perturbed_model_bounded_by_model_term() {
        let mut rng = crate::rng::stream(2, "lemma3b");
        let inst = random_instance(&mut rng, &InstanceParams::default());
        let rep = verify_lemma3(&inst.mdp, &inst.model, &inst.policy, &inst.policy, 200).unwrap();
        assert_eq!(rep.d_tv_max_policies, 0.0);
        assert!(rep.holds, "slack {}", rep.slack);
        // with identical policies the whole bound is the model-error term
        let model_term =
            2.0 * inst.mdp.r_max() * rep.delta_series / (1.0 - inst.mdp.gamma());
        assert!(rep.gap <= model_term + 1e-9);
    }
}
