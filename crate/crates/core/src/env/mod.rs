//! Toy continuous-control environments plus exact finite MDPs.
//!
//! The continuous tasks are deliberately small: bounded actions, shaped
//! rewards, no true terminal states inside the horizon. Episode truncation
//! at the horizon is reported through [`StepOutcome::truncated`]; `done`
//! stays false because truncation is not a terminal for bootstrapping.

mod finite;
mod noisy;
mod pendulum;
mod reacher;

pub use finite::{exact_policy_value, exact_return, FiniteMdp, PolicyValue, TabularPolicy};
pub use noisy::NoisyActionWrapper;
pub use pendulum::Pendulum;
pub use reacher::PointReacher;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True terminal state (never set by the toy tasks).
    pub done: bool,
    /// Horizon reached; episode should be reset but values still bootstrap.
    pub truncated: bool,
}

pub trait ContinuousEnv: Send {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Per-dimension closed action interval (low, high).
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Declared bound on |reward|.
    fn r_max(&self) -> f64;
    fn horizon(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Reward as a function of (observation, action) when the task exposes
    /// one; used by the known-reward shortcut during model rollouts.
    fn reward_fn(&self, obs: &[f64], action: &[f64]) -> Option<f64> {
        let _ = (obs, action);
        None
    }
}

pub(crate) fn validate_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(CoreError::Invalid(format!(
            "action dimension {} does not match environment dimension {dim}",
            action.len()
        )));
    }
    if !action.iter().all(|a| a.is_finite()) {
        return Err(CoreError::Invalid("action contains NaN/Inf".into()));
    }
    Ok(())
}

pub(crate) fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Noise presets used by the noisy-environment experiments: the standard
/// deviation of unobservable Gaussian white noise added to executed actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    #[default]
    None,
    Noisy0,
    Noisy1,
    Noisy2,
}

impl NoisePreset {
    pub fn sigma(self) -> f64 {
        match self {
            NoisePreset::None => 0.0,
            NoisePreset::Noisy0 => 0.05,
            NoisePreset::Noisy1 => 0.1,
            NoisePreset::Noisy2 => 0.2,
        }
    }
}

/// Builds a (possibly noise-wrapped) environment from its string id.
pub fn build_env(id: &str, noise: NoisePreset, seed: u64) -> Result<Box<dyn ContinuousEnv>> {
    build_env_with_horizon(id, noise, seed, None)
}

/// As [`build_env`], optionally overriding the default episode horizon.
pub fn build_env_with_horizon(
    id: &str,
    noise: NoisePreset,
    seed: u64,
    horizon: Option<usize>,
) -> Result<Box<dyn ContinuousEnv>> {
    let inner: Box<dyn ContinuousEnv> = match id {
        "pendulum" => {
            let env = Pendulum::new(seed);
            Box::new(match horizon {
                Some(h) => env.with_horizon(h),
                None => env,
            })
        }
        "reacher1d" => {
            let env = PointReacher::new(seed);
            Box::new(match horizon {
                Some(h) => env.with_horizon(h),
                None => env,
            })
        }
        other => {
            return Err(CoreError::Config(format!(
                "unknown environment id {other:?} (known: pendulum, reacher1d)"
            )))
        }
    };
    if noise == NoisePreset::None {
        Ok(inner)
    } else {
        Ok(Box::new(NoisyActionWrapper::new(
            inner,
            noise.sigma(),
            seed ^ 0x6e6f_6973_655f_7267,
        )?))
    }
}
