//! Experiment configuration, the outer training loop, metrics, ablation
//! grids, and curve export.

mod ablate;
mod curves;
mod run;

pub use ablate::{run_ablation_suite, AblationAxis, AblationCell, AblationTable};
pub use curves::{export_curves, CurveRow, CurveTable};
pub use run::{evaluate_policy, run_experiment, RunResult};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::NoisePreset;
use crate::error::{CoreError, Result};
use crate::model::{EnsembleConfig, ModelTrainConfig};
use crate::rollout::{MaskSchedule, RolloutConfig, RolloutMode};
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Masked model-based actor-critic.
    #[default]
    M2ac,
    /// Model-free SAC baseline: no ensemble, no rollouts, real data only.
    SacOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env_id: String,
    pub noise: NoisePreset,
    /// Episode horizon override; environments default to 200 steps.
    #[serde(default)]
    pub episode_horizon: Option<usize>,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub epochs: usize,
    pub env_steps_per_epoch: usize,
    pub policy_updates_per_epoch: usize,
    /// Uniform-random warmup actions before the policy takes over.
    pub start_steps: usize,
    pub eval_episodes: usize,
    /// Initial states per rollout generation call (B).
    pub rollout_batch: usize,
    /// Rollout generations per epoch, interleaved with equal slices of the
    /// policy updates.
    pub rollout_chunks: usize,
    pub rollout: RolloutConfig,
    /// Replace sampled model rewards with the task's reward function.
    pub use_true_reward: bool,
    pub model: EnsembleConfig,
    pub model_train: ModelTrainConfig,
    pub sac: SacConfig,
    pub sac_batch: usize,
    pub real_capacity: usize,
    pub model_capacity: usize,
    /// Fraction of each update batch drawn from real experience.
    pub real_ratio: f64,
    /// Print a progress line every this many epochs (0 = silent).
    pub log_interval: usize,
    /// Where to write metrics.jsonl / checkpoints; in-memory only if unset.
    pub out_dir: Option<PathBuf>,
    /// Also dump collected real transitions as JSON-lines.
    pub dump_trajectories: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults: small networks and update counts sized so a full
    /// run takes minutes on a laptop core.
    pub fn desk(env_id: &str, seed: u64) -> Self {
        Self {
            env_id: env_id.to_string(),
            noise: NoisePreset::None,
            episode_horizon: None,
            algorithm: Algorithm::M2ac,
            seed,
            epochs: 30,
            env_steps_per_epoch: 250,
            policy_updates_per_epoch: 800,
            start_steps: 250,
            eval_episodes: 10,
            rollout_batch: 256,
            rollout_chunks: 4,
            rollout: RolloutConfig {
                h_max: 5,
                schedule: MaskSchedule::LinearDecay,
                alpha: 1e-3,
                mode: RolloutMode::NonStop,
                estimator: Default::default(),
            },
            use_true_reward: false,
            model: EnsembleConfig {
                members: 5,
                hidden: vec![64, 64],
                ..EnsembleConfig::default()
            },
            model_train: ModelTrainConfig {
                max_epochs: 50,
                batch_size: 64,
                holdout_fraction: 0.2,
                patience: 5,
                lr: 1e-3,
            },
            sac: SacConfig {
                hidden: vec![64, 64],
                actor_lr: 1e-3,
                critic_lr: 1e-3,
                temperature_lr: 3e-4,
                ..SacConfig::default()
            },
            sac_batch: 128,
            real_capacity: 100_000,
            model_capacity: 50_000,
            real_ratio: 0.1,
            log_interval: 0,
            out_dir: None,
            dump_trajectories: false,
        }
    }

    /// Full-scale hyperparameters: 1000 env steps and 10000 policy updates
    /// per epoch, 10 model rollouts per policy update, alpha = 0.001, the
    /// decaying linear masking schedule, and rollout horizon in {1,4,7,10}.
    pub fn appendix(env_id: &str, h_max: usize, seed: u64) -> Result<Self> {
        if ![1, 4, 7, 10].contains(&h_max) {
            return Err(CoreError::Config(format!(
                "full-scale preset expects H_max in {{1,4,7,10}}, got {h_max}"
            )));
        }
        Ok(Self {
            epochs: 200,
            env_steps_per_epoch: 1000,
            policy_updates_per_epoch: 10_000,
            start_steps: 1000,
            // 4 chunks of 25000 starts = 100000 rollouts per epoch,
            // i.e. exactly 10 per policy update
            rollout_batch: 25_000,
            rollout_chunks: 4,
            rollout: RolloutConfig {
                h_max,
                schedule: MaskSchedule::LinearDecay,
                alpha: 1e-3,
                mode: RolloutMode::NonStop,
                estimator: Default::default(),
            },
            model: EnsembleConfig::default(),
            model_train: ModelTrainConfig::default(),
            sac: SacConfig::default(),
            sac_batch: 256,
            real_ratio: 0.05,
            ..Self::desk(env_id, seed)
        })
    }

    /// Model rollouts generated per policy update (derived).
    pub fn rollouts_per_update(&self) -> f64 {
        (self.rollout_batch * self.rollout_chunks) as f64 / self.policy_updates_per_epoch as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.env_steps_per_epoch == 0 {
            return Err(CoreError::Config("env steps per epoch must be > 0".into()));
        }
        if self.eval_episodes == 0 {
            return Err(CoreError::Config("eval episodes must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(CoreError::Config("real ratio must be in [0,1]".into()));
        }
        if self.algorithm == Algorithm::M2ac {
            if self.rollout_chunks == 0 || self.rollout_batch == 0 {
                return Err(CoreError::Config(
                    "rollout batch and chunks must be > 0".into(),
                ));
            }
            if self.model.members < 2 {
                return Err(CoreError::Config("ensemble needs K >= 2".into()));
            }
        }
        if self.sac_batch == 0 {
            return Err(CoreError::Config("sac batch must be > 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Digest over everything except seed and output paths; used to refuse
    /// merging curves from mismatched configurations.
    pub fn digest(&self) -> Result<u64> {
        let mut canon = self.clone();
        canon.seed = 0;
        canon.out_dir = None;
        canon.log_interval = 0;
        let text = serde_json::to_string(&canon)?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(h)
    }
}

/// One metrics record per epoch (epoch 0 is the pre-training evaluation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub env_steps: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub model_holdout_nll: Option<f64>,
    pub model_stopping_epoch: Option<usize>,
    /// Kept / generated over this epoch's rollout generations.
    pub kept_fraction: Option<f64>,
    /// Mean uncertainty of the kept model transitions.
    pub mean_uncertainty: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub temperature: f64,
    pub mean_q: f64,
    pub model_fraction: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_is_byte_identical() {
        let cfg = ExperimentConfig::desk("pendulum", 42);
        let json = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        let json2 = back.to_json().unwrap();
        assert_eq!(json, json2);
    }

    #[test]
    fn appendix_preset_matches_published_hyperparameters() {
        for h_max in [1usize, 4, 7, 10] {
            let cfg = ExperimentConfig::appendix("pendulum", h_max, 0).unwrap();
            assert_eq!(cfg.env_steps_per_epoch, 1000);
            assert_eq!(cfg.policy_updates_per_epoch, 10_000);
            assert!((cfg.rollouts_per_update() - 10.0).abs() < 1e-12);
            assert_eq!(cfg.rollout.h_max, h_max);
            assert_eq!(cfg.rollout.alpha, 1e-3);
            assert_eq!(cfg.rollout.schedule, MaskSchedule::LinearDecay);
            // schedule w = 0.5 at H_max = 1, decaying linear otherwise
            if h_max == 1 {
                assert_eq!(cfg.rollout.schedule.rate(1, 0).unwrap(), 0.5);
            }
        }
        assert!(ExperimentConfig::appendix("pendulum", 3, 0).is_err());
    }

    #[test]
    fn digest_ignores_seed_but_not_hyperparameters() {
        let a = ExperimentConfig::desk("pendulum", 1);
        let mut b = ExperimentConfig::desk("pendulum", 2);
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.rollout.h_max = 7;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }
}
