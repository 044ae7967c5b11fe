//! Exact verification lab for the algorithm's finite-MDP theory: total
//! variation / KL primitives, the three supporting lemmas, the return and
//! masked-Q bounds, the penalized lower bound, and randomized sweeps.

mod dist;
mod lemmas;
mod sweep;
mod theorems;

pub use dist::{kl_divergence, tv_distance};
pub use lemmas::{
    verify_lemma1, verify_lemma2, verify_lemma3, JointDistribution, Lemma1Report, Lemma2Report,
    Lemma3Report,
};
pub use sweep::{
    concentrated_error_instance, masking_reduces_gap_demo, random_instance, run_theory_sweeps,
    ConcentratedErrorInstance, FamilyReport, InstanceParams, MaskingGapReport, SweepCounts,
    TheorySweepReport, VerificationInstance,
};
pub use theorems::{
    discounted_mask_weights, mask_weight_sequence, masked_epsilon, masked_q_exact,
    masked_reward_epsilon, q_m2ac_exact, verify_corollary1, verify_theorem1, verify_theorem2,
    CorollaryReport, MaskTable, Theorem1Report, Theorem2Report, SLACK_TOL,
};
