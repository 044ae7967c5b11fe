//! Randomized verification sweeps.
//!
//! Instances are finite MDPs with Dirichlet-perturbed model dynamics (the
//! concentration is the dial on model error), random stochastic policies,
//! and Bernoulli masks. Each instance is derived deterministically from
//! (base seed, index), so sweeps are reproducible and parallelize freely.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::Serialize;

use super::lemmas::{verify_lemma1, verify_lemma2, verify_lemma3, JointDistribution};
use super::theorems::{
    masked_epsilon, masked_q_exact, verify_corollary1, verify_theorem1, verify_theorem2,
    MaskTable, SLACK_TOL,
};
use crate::bounds::dist::tv_raw;
use crate::env::{exact_policy_value, FiniteMdp, TabularPolicy};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone)]
pub struct InstanceParams {
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma_range: (f64, f64),
    /// Dirichlet concentration range (log-uniform) for model perturbation;
    /// higher means a more accurate model.
    pub concentration_range: (f64, f64),
    /// Probability that the model's reward table is perturbed too.
    pub reward_error_prob: f64,
    /// Probability that the model's initial distribution is perturbed.
    pub initial_error_prob: f64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            max_states: 8,
            max_actions: 4,
            gamma_range: (0.5, 0.95),
            concentration_range: (2.0, 500.0),
            reward_error_prob: 0.3,
            initial_error_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationInstance {
    pub mdp: FiniteMdp,
    pub model: FiniteMdp,
    pub policy: TabularPolicy,
    #[serde(skip)]
    pub mask: MaskTable,
    pub mask_bits: Vec<u8>,
}

pub(crate) fn dirichlet(rng: &mut Pcg64, alphas: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            let shape = a.max(1e-3);
            Gamma::new(shape, 1.0).unwrap().sample(rng).max(1e-300)
        })
        .collect();
    let sum: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|x| *x /= sum);
    draws
}

fn normalize_exact(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    // push residual rounding error into the largest entry so the row sums
    // to 1 within the MDP constructor's 1e-12 tolerance
    let resid = 1.0 - row.iter().sum::<f64>();
    let imax = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    row[imax] += resid;
}

pub fn random_instance(rng: &mut Pcg64, params: &InstanceParams) -> VerificationInstance {
    let n = rng.gen_range(2..=params.max_states);
    let m = rng.gen_range(2..=params.max_actions);
    let gamma = rng.gen_range(params.gamma_range.0..=params.gamma_range.1);
    let r_max = rng.gen_range(0.5..5.0);

    let mut transition = Vec::with_capacity(n * m * n);
    for _ in 0..n * m {
        let mut row = dirichlet(rng, &vec![1.0; n]);
        normalize_exact(&mut row);
        transition.extend(row);
    }
    let reward: Vec<f64> = (0..n * m)
        .map(|_| rng.gen_range(-0.9 * r_max..0.9 * r_max))
        .collect();
    let mut initial = dirichlet(rng, &vec![1.0; n]);
    normalize_exact(&mut initial);
    let mdp = FiniteMdp::new(n, m, transition, reward.clone(), initial.clone(), gamma, r_max)
        .expect("generated MDP is valid");

    // Dirichlet-perturb every transition row around the true row
    let (c_lo, c_hi) = params.concentration_range;
    let concentration = (rng.gen_range(c_lo.ln()..c_hi.ln())).exp();
    let mut model_transition = Vec::with_capacity(n * m * n);
    for s in 0..n {
        for a in 0..m {
            let alphas: Vec<f64> = mdp
                .row(s, a)
                .iter()
                .map(|p| concentration * p + 0.05)
                .collect();
            let mut row = dirichlet(rng, &alphas);
            normalize_exact(&mut row);
            model_transition.extend(row);
        }
    }
    let model_reward: Vec<f64> = if rng.gen_range(0.0..1.0) < params.reward_error_prob {
        reward
            .iter()
            .map(|r| (r + rng.gen_range(-0.2 * r_max..0.2 * r_max)).clamp(-0.99 * r_max, 0.99 * r_max))
            .collect()
    } else {
        reward
    };
    let model_initial = if rng.gen_range(0.0..1.0) < params.initial_error_prob {
        let mut p0 = dirichlet(rng, &initial.iter().map(|p| 50.0 * p + 0.05).collect::<Vec<_>>());
        normalize_exact(&mut p0);
        p0
    } else {
        initial
    };
    let model = FiniteMdp::new(n, m, model_transition, model_reward, model_initial, gamma, r_max)
        .expect("generated model MDP is valid");

    let mut policy_probs = Vec::with_capacity(n * m);
    for _ in 0..n {
        let mut row = dirichlet(rng, &vec![1.0; m]);
        normalize_exact(&mut row);
        policy_probs.extend(row);
    }
    let policy = TabularPolicy::new(n, m, policy_probs).expect("generated policy is valid");

    let mask_bits: Vec<u8> = (0..n * m).map(|_| rng.gen_range(0..2u8)).collect();
    let mask = MaskTable::new(n, m, mask_bits.clone()).unwrap();

    VerificationInstance {
        mdp,
        model,
        policy,
        mask,
        mask_bits,
    }
}

/// Second random policy for the lemma-2/3 two-policy checks.
fn random_policy(rng: &mut Pcg64, n: usize, m: usize) -> TabularPolicy {
    let mut probs = Vec::with_capacity(n * m);
    for _ in 0..n {
        let mut row = dirichlet(rng, &vec![1.0; m]);
        normalize_exact(&mut row);
        probs.extend(row);
    }
    TabularPolicy::new(n, m, probs).unwrap()
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyReport {
    pub family: String,
    pub instances: usize,
    pub violations: usize,
    pub min_slack: f64,
    pub min_slack_seed: u64,
    pub elapsed_ms: u128,
    /// Full dump of the worst (minimum-slack) instance for inspection.
    pub min_slack_instance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheorySweepReport {
    pub base_seed: u64,
    pub slack_tolerance: f64,
    pub families: Vec<FamilyReport>,
}

impl TheorySweepReport {
    pub fn total_violations(&self) -> usize {
        self.families.iter().map(|f| f.violations).sum()
    }
}

struct InstanceOutcome {
    seed: u64,
    slack: f64,
    violation: bool,
    dump: serde_json::Value,
}

fn sweep_family<F>(name: &str, count: usize, base_seed: u64, run: F) -> Result<FamilyReport>
where
    F: Fn(u64) -> Result<InstanceOutcome> + Sync,
{
    let start = std::time::Instant::now();
    let outcomes: Vec<InstanceOutcome> = (0..count as u64)
        .into_par_iter()
        .map(|i| run(base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut min_slack = f64::INFINITY;
    let mut min_seed = base_seed;
    let mut min_dump = None;
    let mut violations = 0;
    for o in outcomes {
        if o.violation {
            violations += 1;
        }
        if o.slack < min_slack {
            min_slack = o.slack;
            min_seed = o.seed;
            min_dump = Some(o.dump);
        }
    }
    Ok(FamilyReport {
        family: name.to_string(),
        instances: count,
        violations,
        min_slack,
        min_slack_seed: min_seed,
        elapsed_ms: start.elapsed().as_millis(),
        min_slack_instance: min_dump,
    })
}

/// Horizon at which gamma^T r_max / (1 - gamma) drops below 1e-10.
fn tail_horizon(gamma: f64, r_max: f64) -> usize {
    let mut t = 1usize;
    let mut pow = gamma;
    while pow * r_max / (1.0 - gamma) >= 1e-10 && t < 20_000 {
        pow *= gamma;
        t += 1;
    }
    t
}

pub fn sweep_lemma1(count: usize, base_seed: u64) -> Result<FamilyReport> {
    sweep_family("lemma1_joint_tv", count, base_seed, |seed| {
        let mut r = rng::stream(seed, "lemma1-instance");
        let nx = r.gen_range(2..=4);
        let ny = r.gen_range(2..=4);
        let mut cells_p = dirichlet(&mut r, &vec![1.0; nx * ny]);
        normalize_exact(&mut cells_p);
        let mut cells_q = dirichlet(&mut r, &vec![1.0; nx * ny]);
        normalize_exact(&mut cells_q);
        let p = JointDistribution::new(nx, ny, cells_p)?;
        let q = JointDistribution::new(nx, ny, cells_q)?;
        let rep = verify_lemma1(&p, &q)?;
        Ok(InstanceOutcome {
            seed,
            slack: rep.slack,
            violation: !rep.holds,
            dump: serde_json::json!({"nx": nx, "ny": ny, "report": rep}),
        })
    })
}

pub fn sweep_lemma23(count: usize, base_seed: u64) -> Result<FamilyReport> {
    sweep_family("lemma2_lemma3_markov_chains", count, base_seed, |seed| {
        let mut r = rng::stream(seed, "lemma23-instance");
        let inst = random_instance(&mut r, &InstanceParams::default());
        let pol_model = random_policy(&mut r, inst.mdp.n_states(), inst.mdp.n_actions());
        let horizon = tail_horizon(inst.mdp.gamma(), inst.mdp.r_max()).min(400);
        let rep2 = verify_lemma2(&inst.mdp, &inst.model, &inst.policy, &pol_model, 50)?;
        let rep3 = verify_lemma3(&inst.mdp, &inst.model, &inst.policy, &pol_model, horizon)?;
        let slack = rep2.min_step_slack.min(rep3.slack);
        Ok(InstanceOutcome {
            seed,
            slack,
            violation: !(rep2.holds && rep3.holds),
            dump: serde_json::json!({"instance": inst, "lemma2": rep2, "lemma3": rep3}),
        })
    })
}

pub fn sweep_theorem1(count: usize, base_seed: u64) -> Result<FamilyReport> {
    sweep_family("theorem1_return_bound", count, base_seed, |seed| {
        let mut r = rng::stream(seed, "theorem1-instance");
        let inst = random_instance(&mut r, &InstanceParams::default());
        let rep = verify_theorem1(&inst.mdp, &inst.model, &inst.policy)?;
        Ok(InstanceOutcome {
            seed,
            slack: rep.slack_t0,
            violation: !rep.holds,
            dump: serde_json::json!({"instance": inst, "report": rep}),
        })
    })
}

pub fn sweep_theorem2(count: usize, base_seed: u64) -> Result<FamilyReport> {
    sweep_family("theorem2_masked_q_bound", count, base_seed, |seed| {
        let mut r = rng::stream(seed, "theorem2-instance");
        let inst = random_instance(&mut r, &InstanceParams::default());
        let rep = verify_theorem2(&inst.mdp, &inst.model, &inst.policy, &inst.mask)?;
        let slack = rep.one_sided_min_slack.min(rep.two_sided_min_slack);
        let violation = !rep.holds;
        // trim bulky tables from the dump
        let dump = serde_json::json!({
            "instance": inst,
            "epsilon": rep.epsilon,
            "epsilon_reward": rep.epsilon_reward,
            "one_sided_min_slack": rep.one_sided_min_slack,
            "two_sided_min_slack": rep.two_sided_min_slack,
            "w_head": rep.w_head,
        });
        Ok(InstanceOutcome {
            seed,
            slack,
            violation,
            dump,
        })
    })
}

pub fn sweep_corollary1(count: usize, base_seed: u64) -> Result<FamilyReport> {
    sweep_family("corollary1_m2ac_lower_bound", count, base_seed, |seed| {
        let mut r = rng::stream(seed, "corollary1-instance");
        let inst = random_instance(&mut r, &InstanceParams::default());
        // per-sample variant: a noisy estimate of the true per-pair TV with
        // the practical-scale penalty; reported, never asserted
        let m = inst.mdp.n_actions();
        let u_table: Vec<f64> = (0..inst.mdp.n_states() * m)
            .map(|i| {
                let (s, a) = (i / m, i % m);
                let tv = tv_raw(inst.mdp.row(s, a), inst.model.row(s, a));
                (tv * r.gen_range(0.5..1.5)).max(0.0)
            })
            .collect();
        let rep = verify_corollary1(
            &inst.mdp,
            &inst.model,
            &inst.policy,
            &inst.mask,
            Some((&u_table, 0.001)),
        )?;
        Ok(InstanceOutcome {
            seed,
            slack: rep.min_slack,
            violation: !rep.holds,
            dump: serde_json::json!({
                "instance": inst,
                "penalty": rep.penalty,
                "min_slack": rep.min_slack,
                "per_sample_violations": rep.per_sample_violations,
                "per_sample_min_slack": rep.per_sample_min_slack,
            }),
        })
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SweepCounts {
    pub lemma1: usize,
    pub lemma23: usize,
    pub theorem1: usize,
    pub theorem2: usize,
    pub corollary1: usize,
}

impl Default for SweepCounts {
    fn default() -> Self {
        Self {
            lemma1: 1000,
            lemma23: 500,
            theorem1: 1000,
            theorem2: 1000,
            corollary1: 1000,
        }
    }
}

/// Runs every family; the returned report is the CLI's JSON payload.
pub fn run_theory_sweeps(counts: SweepCounts, base_seed: u64) -> Result<TheorySweepReport> {
    let families = vec![
        sweep_lemma1(counts.lemma1, base_seed)?,
        sweep_lemma23(counts.lemma23, base_seed.wrapping_add(1 << 32))?,
        sweep_theorem1(counts.theorem1, base_seed.wrapping_add(2 << 32))?,
        sweep_theorem2(counts.theorem2, base_seed.wrapping_add(3 << 32))?,
        sweep_corollary1(counts.corollary1, base_seed.wrapping_add(4 << 32))?,
    ];
    Ok(TheorySweepReport {
        base_seed,
        slack_tolerance: SLACK_TOL,
        families,
    })
}

/// Crafted instance for the masking-reduces-gap demonstration: the model is
/// near-exact except on `n_bad` high-error pairs.
pub struct ConcentratedErrorInstance {
    pub inst: VerificationInstance,
    pub bad_pairs: Vec<(usize, usize)>,
}

pub fn concentrated_error_instance(rng: &mut Pcg64, n_bad: usize) -> ConcentratedErrorInstance {
    let params = InstanceParams {
        concentration_range: (5000.0, 20000.0),
        reward_error_prob: 0.0,
        initial_error_prob: 0.0,
        ..InstanceParams::default()
    };
    let mut inst = random_instance(rng, &params);
    let n = inst.mdp.n_states();
    let m = inst.mdp.n_actions();

    // pick distinct pairs and inject large error there
    let mut bad_pairs = Vec::new();
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..m).map(move |a| (s, a)))
        .collect();
    for _ in 0..n_bad.min(candidates.len()) {
        let i = rng.gen_range(0..candidates.len());
        bad_pairs.push(candidates.swap_remove(i));
    }
    for &(s, a) in &bad_pairs {
        let mut row = dirichlet(rng, &vec![0.3; n]);
        normalize_exact(&mut row);
        inst.model.set_row(s, a, row).unwrap();
    }
    inst.mask = MaskTable::all_ones(n, m);
    ConcentratedErrorInstance { inst, bad_pairs }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskingGapReport {
    pub instances: usize,
    /// Instances where epsilon and the theorem-2 RHS were non-increasing in
    /// the number of masked-out high-error pairs.
    pub monotone_ok: usize,
    /// Instances where masking all high-error pairs shrank the measured
    /// max |Q - Q_mask| gap by at least 50%.
    pub gap_halved: usize,
}

/// Demonstrates that masking out the highest-error pairs tightens the bound:
/// epsilon and the theorem-2 budget never increase, and once every bad pair
/// is masked out the realized gap collapses.
pub fn masking_reduces_gap_demo(instances: usize, base_seed: u64) -> Result<MaskingGapReport> {
    let outcomes: Vec<(bool, bool)> = (0..instances as u64)
        .into_par_iter()
        .map(|i| -> Result<(bool, bool)> {
            let mut r = rng::stream(base_seed.wrapping_add(i), "masking-gap");
            let n_bad = r.gen_range(2..=4);
            let crafted = concentrated_error_instance(&mut r, n_bad);
            let inst = &crafted.inst;
            let n = inst.mdp.n_states();
            let m = inst.mdp.n_actions();
            let q_true = exact_policy_value(&inst.mdp, &inst.policy)?.q;

            // rank pairs by true model error, mask out top-k for growing k
            let mut pairs: Vec<(usize, usize, f64)> = (0..n)
                .flat_map(|s| (0..m).map(move |a| (s, a)))
                .map(|(s, a)| (s, a, tv_raw(inst.mdp.row(s, a), inst.model.row(s, a))))
                .collect();
            pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());

            let gap_of = |mask: &MaskTable| -> Result<f64> {
                let q_mask = masked_q_exact(&inst.mdp, &inst.model, &inst.policy, mask)?;
                Ok(q_true
                    .iter()
                    .zip(&q_mask)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max))
            };
            let rhs_of = |mask: &MaskTable| -> Result<f64> {
                let eps = masked_epsilon(&inst.mdp, &inst.model, mask);
                let ws = super::theorems::discounted_mask_weights(&inst.model, &inst.policy, mask)?;
                let alpha = 2.0 * inst.mdp.r_max() / (1.0 - inst.mdp.gamma());
                Ok(ws.iter().map(|w| alpha * eps * w).fold(0.0, f64::max))
            };

            let mut mask = MaskTable::all_ones(n, m);
            let gap_unmasked = gap_of(&mask)?;
            let mut monotone = true;
            let mut prev_eps = f64::INFINITY;
            let mut prev_rhs = f64::INFINITY;
            for k in 0..=crafted.bad_pairs.len() {
                let eps = masked_epsilon(&inst.mdp, &inst.model, &mask);
                let rhs = rhs_of(&mask)?;
                if eps > prev_eps + 1e-12 || rhs > prev_rhs + 1e-9 {
                    monotone = false;
                }
                prev_eps = eps;
                prev_rhs = rhs;
                if k < crafted.bad_pairs.len() {
                    let (s, a, _) = pairs[k];
                    mask.set(s, a, false);
                }
            }
            let gap_masked = gap_of(&mask)?;
            let halved = gap_masked <= 0.5 * gap_unmasked || gap_unmasked < 1e-12;
            Ok((monotone, halved))
        })
        .collect::<Result<Vec<_>>>()?;

    let monotone_ok = outcomes.iter().filter(|(m, _)| *m).count();
    let gap_halved = outcomes.iter().filter(|(_, h)| *h).count();
    Ok(MaskingGapReport {
        instances,
        monotone_ok,
        gap_halved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let make = |seed| {
            let mut r = rng::stream(seed, "inst");
            let i = random_instance(&mut r, &InstanceParams::default());
            (i.mdp.rewards().to_vec(), i.mask_bits.clone())
        };
        assert_eq!(make(3), make(3));
    }

    #[test]
    fn small_sweeps_have_zero_violations() {
        let rep = run_theory_sweeps(
            SweepCounts {
                lemma1: 50,
                lemma23: 20,
                theorem1: 50,
                theorem2: 50,
                corollary1: 50,
            },
            12345,
        )
        .unwrap();
        for fam in &rep.families {
            assert_eq!(fam.violations, 0, "{}: min slack {}", fam.family, fam.min_slack);
        }
    }

    #[test]
    fn masking_demo_small_run() {
        let rep = masking_reduces_gap_demo(10, 777).unwrap();
        assert_eq!(rep.monotone_ok, 10);
        assert!(rep.gap_halved >= 9, "halved on {}/10", rep.gap_halved);
    }
}
