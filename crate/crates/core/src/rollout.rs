//! Masked model rollouts.
//!
//! A batch of imaginary rollouts starts from real states. Each step draws
//! actions from the policy and one-member samples from the ensemble, scores
//! every sample with an uncertainty estimate, keeps only the floor(w_h * B_h)
//! lowest-uncertainty samples, and stores them with the reward penalized by
//! alpha * u. Non-stop mode keeps advancing every rollout and only filters
//! storage; hard-stop mode shrinks the live batch to the kept samples.

use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{EnsembleModel, UncertaintyEstimator};
use crate::types::{Source, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    #[default]
    NonStop,
    HardStop,
}

/// Masking rate as a function of the rollout step h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum MaskSchedule {
    /// w_h = w for every step.
    Constant(f64),
    /// w = 0.5 for a single-step rollout, otherwise the decaying linear rate
    /// w_h = (H_max - h) / (2 (H_max + 1)), whose mean over steps is 0.25.
    #[default]
    LinearDecay,
}

impl MaskSchedule {
    pub fn rate(&self, h_max: usize, h: usize) -> Result<f64> {
        match self {
            MaskSchedule::Constant(w) => {
                if h >= h_max {
                    return Err(CoreError::Invalid(format!(
                        "rollout step {h} out of range for H_max {h_max}"
                    )));
                }
                if !(*w > 0.0 && *w <= 1.0) {
                    return Err(CoreError::Config(format!(
                        "constant masking rate must be in (0,1], got {w}"
                    )));
                }
                Ok(*w)
            }
            MaskSchedule::LinearDecay => masking_schedule(h_max, h),
        }
    }
}

/// The decaying linear masking rate: 0.5 when H_max = 1, else
/// (H_max - h) / (2 (H_max + 1)).
pub fn masking_schedule(h_max: usize, h: usize) -> Result<f64> {
    if h_max == 0 {
        return Err(CoreError::Invalid("H_max must be >= 1".into()));
    }
    if h >= h_max {
        return Err(CoreError::Invalid(format!(
            "rollout step {h} out of range for H_max {h_max}"
        )));
    }
    if h_max == 1 {
        Ok(0.5)
    } else {
        Ok((h_max - h) as f64 / (2.0 * (h_max as f64 + 1.0)))
    }
}

/// Indices of the floor(w * len) lowest scores, ties broken by ascending
/// index, returned in ascending index order.
pub fn mask_select(scores: &[f64], w: f64) -> Result<Vec<usize>> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(CoreError::Invalid(format!(
            "masking rate must be in (0,1], got {w}"
        )));
    }
    if scores.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(CoreError::Invalid(
            "uncertainty scores must be finite and nonnegative".into(),
        ));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    // the epsilon guards against binary representation error in w * len
    // (e.g. w = 10/22 at len 11 must keep exactly 5)
    let kept_count = ((w * scores.len() as f64) + 1e-9).floor() as usize;
    let kept_count = kept_count.min(scores.len());
    if kept_count == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut kept = order[..kept_count].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// r_tilde - alpha * u.
pub fn penalized_reward(reward: f64, uncertainty: f64, alpha: f64) -> f64 {
    reward - alpha * uncertainty
}

/// Anything that can sample actions during model rollouts. Implemented by
/// the SAC agent; tests use plain closures.
pub trait RolloutPolicy {
    fn sample_action(&self, state: &[f64], rng: &mut Pcg64) -> Vec<f64>;
}

impl<F> RolloutPolicy for F
where
    F: Fn(&[f64], &mut Pcg64) -> Vec<f64>,
{
    fn sample_action(&self, state: &[f64], rng: &mut Pcg64) -> Vec<f64> {
        self(state, rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub h_max: usize,
    pub schedule: MaskSchedule,
    /// Model-error penalty coefficient applied to stored rewards.
    pub alpha: f64,
    pub mode: RolloutMode,
    pub estimator: UncertaintyEstimator,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            h_max: 1,
            schedule: MaskSchedule::default(),
            alpha: 1e-3,
            mode: RolloutMode::default(),
            estimator: UncertaintyEstimator::default(),
        }
    }
}

impl RolloutConfig {
    fn validate(&self) -> Result<()> {
        if self.h_max == 0 {
            return Err(CoreError::Config("H_max must be >= 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(CoreError::Config(format!(
                "penalty alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        for h in 0..self.h_max {
            self.schedule.rate(self.h_max, h)?;
        }
        Ok(())
    }
}

/// Per-step generation statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub live: usize,
    pub kept: usize,
    pub dropped: usize,
    pub masking_rate: f64,
    pub u_min: f64,
    pub u_median: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub steps: Vec<StepStats>,
}

impl RolloutBatch {
    pub fn kept_total(&self) -> usize {
        self.transitions.len()
    }

    pub fn generated_total(&self) -> usize {
        self.steps.iter().map(|s| s.live).sum()
    }

    pub fn mean_kept_uncertainty(&self) -> f64 {
        if self.transitions.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.uncertainty).sum::<f64>() / self.transitions.len() as f64
    }
}

fn quantiles(mut us: Vec<f64>) -> (f64, f64, f64) {
    if us.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (us[0], us[us.len() / 2], us[us.len() - 1])
}

/// Masked model rollouts from a batch of initial states. Interacts only with
/// the ensemble; the real environment is never touched. `reward_override`
/// implements the known-reward shortcut: when present, it replaces the
/// model's sampled reward before penalization.
pub fn generate(
    ens: &EnsembleModel,
    policy: &dyn RolloutPolicy,
    initial_states: &[Vec<f64>],
    cfg: &RolloutConfig,
    rng: &mut Pcg64,
    reward_override: Option<&dyn Fn(&[f64], &[f64]) -> f64>,
) -> Result<RolloutBatch> {
    cfg.validate()?;
    if !ens.is_trained() {
        return Err(CoreError::Invalid(
            "rollout generation requires a trained ensemble".into(),
        ));
    }
    let mut batch = RolloutBatch::default();
    if initial_states.is_empty() {
        return Ok(batch);
    }

    let mut live: Vec<Vec<f64>> = initial_states.to_vec();
    for h in 0..cfg.h_max {
        if live.is_empty() {
            break;
        }
        let w = cfg.schedule.rate(cfg.h_max, h)?;

        // one sampled model transition per live rollout
        let mut candidates = Vec::with_capacity(live.len());
        let mut scores = Vec::with_capacity(live.len());
        for state in &live {
            let action = policy.sample_action(state, rng);
            let (k, raw_reward, next) = ens.sample_transition(state, &action, rng)?;
            let reward = match reward_override {
                Some(f) => f(state, &action),
                None => raw_reward,
            };
            let u = cfg.estimator.score(ens, k, state, &action, raw_reward, &next)?;
            scores.push(u);
            candidates.push((state.clone(), action, reward, next, u));
        }

        let kept_idx = mask_select(&scores, w)?;
        let (u_min, u_median, u_max) = quantiles(scores.clone());
        batch.steps.push(StepStats {
            step: h,
            live: live.len(),
            kept: kept_idx.len(),
            dropped: live.len() - kept_idx.len(),
            masking_rate: w,
            u_min,
            u_median,
            u_max,
        });

        for &i in &kept_idx {
            let (state, action, reward, next, u) = &candidates[i];
            batch.transitions.push(Transition {
                state: state.clone(),
                action: action.clone(),
                reward: penalized_reward(*reward, *u, cfg.alpha),
                next_state: next.clone(),
                done: false,
                source: Source::Model,
                uncertainty: *u,
                rollout_step: h as u32,
            });
        }

        live = match cfg.mode {
            // every rollout advances to its sampled next state
            RolloutMode::NonStop => candidates.into_iter().map(|c| c.3).collect(),
            // only kept rollouts continue
            RolloutMode::HardStop => kept_idx.iter().map(|&i| candidates[i].3.clone()).collect(),
        };
    }
    Ok(batch)
}
