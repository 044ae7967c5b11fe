//! One-axis ablation grids with shared seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig};
use crate::error::Result;
use crate::model::UncertaintyEstimator;
use crate::rollout::{MaskSchedule, RolloutMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Penalty coefficient in {0.01, 0.001, 0}.
    Alpha,
    /// Non-stop vs hard-stop rollout mode.
    Mode,
    /// OvR vs OvA vs negative-likelihood uncertainty scores.
    Estimator,
    /// Constant masking rates vs the decaying linear schedule.
    MaskingRate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub per_seed_final_return: Vec<f64>,
    pub mean_final_return: f64,
    pub std_final_return: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

fn cells_for(axis: AblationAxis, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    match axis {
        AblationAxis::Alpha => [0.01, 0.001, 0.0]
            .into_iter()
            .map(|alpha| {
                let mut cfg = base.clone();
                cfg.rollout.alpha = alpha;
                (format!("alpha={alpha}"), cfg)
            })
            .collect(),
        AblationAxis::Mode => [RolloutMode::NonStop, RolloutMode::HardStop]
            .into_iter()
            .map(|mode| {
                let mut cfg = base.clone();
                cfg.rollout.mode = mode;
                (format!("{mode:?}"), cfg)
            })
            .collect(),
        AblationAxis::Estimator => [
            UncertaintyEstimator::OneVsRest,
            UncertaintyEstimator::OneVsAll,
            UncertaintyEstimator::NegLikelihood,
        ]
        .into_iter()
        .map(|est| {
            let mut cfg = base.clone();
            cfg.rollout.estimator = est;
            (format!("{est:?}"), cfg)
        })
        .collect(),
        AblationAxis::MaskingRate => {
            let mut cells: Vec<(String, ExperimentConfig)> = [0.25, 0.5, 0.9]
                .into_iter()
                .map(|w| {
                    let mut cfg = base.clone();
                    cfg.rollout.schedule = MaskSchedule::Constant(w);
                    (format!("w={w}"), cfg)
                })
                .collect();
            let mut linear = base.clone();
            linear.rollout.schedule = MaskSchedule::LinearDecay;
            cells.push(("w=linear-decay".to_string(), linear));
            cells
        }
    }
}

/// Runs the grid over one axis with shared seeds; cells differ only in the
/// swept setting. Cell runs execute in parallel and are individually
/// deterministic in (config, seed).
pub fn run_ablation_suite(
    base: &ExperimentConfig,
    axis: AblationAxis,
    seeds: &[u64],
) -> Result<AblationTable> {
    let cells = cells_for(axis, base);
    let jobs: Vec<(usize, String, ExperimentConfig)> = cells
        .into_iter()
        .enumerate()
        .flat_map(|(ci, (label, cfg))| {
            seeds.iter().map(move |&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                c.out_dir = None;
                (ci, label.clone(), c)
            })
        })
        .collect();

    let outcomes: Vec<(usize, String, f64)> = jobs
        .into_par_iter()
        .map(|(ci, label, cfg)| {
            let result = run_experiment(&cfg)?;
            Ok((ci, label, result.final_return()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_cells = outcomes.iter().map(|(ci, _, _)| ci + 1).max().unwrap_or(0);
    let mut table_cells = Vec::with_capacity(n_cells);
    for ci in 0..n_cells {
        let mut label = String::new();
        let mut returns = Vec::new();
        for (i, l, r) in &outcomes {
            if *i == ci {
                label = l.clone();
                returns.push(*r);
            }
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        table_cells.push(AblationCell {
            label,
            per_seed_final_return: returns,
            mean_final_return: mean,
            std_final_return: var.sqrt(),
        });
    }
    Ok(AblationTable {
        axis,
        seeds: seeds.to_vec(),
        cells: table_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_cells_match_published_grids() {
        let base = ExperimentConfig::desk("pendulum", 0);
        let alpha: Vec<String> = cells_for(AblationAxis::Alpha, &base)
            .into_iter()
            .map(|(l, _)| l)
            .collect();
        assert_eq!(alpha, vec!["alpha=0.01", "alpha=0.001", "alpha=0"]);

        let modes = cells_for(AblationAxis::Mode, &base).len();
        assert_eq!(modes, 2);
        let estimators = cells_for(AblationAxis::Estimator, &base).len();
        assert_eq!(estimators, 3);
    }

    #[test]
    fn tiny_ablation_runs_end_to_end() {
        let mut base = ExperimentConfig::desk("pendulum", 0);
        base.epochs = 1;
        base.env_steps_per_epoch = 60;
        base.start_steps = 60;
        base.policy_updates_per_epoch = 4;
        base.rollout_batch = 8;
        base.rollout_chunks = 1;
        base.rollout.h_max = 1;
        base.eval_episodes = 1;
        base.model.members = 2;
        base.model.hidden = vec![8];
        base.model_train.max_epochs = 2;
        base.model_train.batch_size = 16;
        base.sac.hidden = vec![8];
        base.sac_batch = 8;
        let table = run_ablation_suite(&base, AblationAxis::Mode, &[1, 2]).unwrap();
        assert_eq!(table.cells.len(), 2);
        for cell in &table.cells {
            assert_eq!(cell.per_seed_final_return.len(), 2);
            assert!(cell.mean_final_return.is_finite());
        }
    }
}
