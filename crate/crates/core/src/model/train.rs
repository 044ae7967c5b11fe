//! Ensemble training: per-member Gaussian NLL minimization with a shared
//! holdout set and patience-based early stopping.
//!
//! Each call retrains from scratch: members are re-initialized, the
//! train/holdout split is drawn from the given seed, and normalization
//! statistics are recomputed from the training split and frozen. Parameters
//! are restored to the epoch with the best mean holdout NLL.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use m2ac_nn::{AdamConfig, AdamState, DenseArray, Tape, Var};

use super::{EnsembleModel, MemberNet, Normalizer};
use crate::error::{CoreError, Result};
use crate::rng;
use crate::types::Transition;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelTrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Fraction of the dataset held out for early stopping, in (0, 1).
    pub holdout_fraction: f64,
    /// Number of consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub lr: f64,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 256,
            holdout_fraction: 0.2,
            patience: 5,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean train NLL per epoch, one curve per member.
    pub train_nll: Vec<Vec<f64>>,
    /// Mean-over-members holdout NLL per epoch.
    pub holdout_nll: Vec<f64>,
    /// Per-member holdout NLL per epoch.
    pub member_holdout_nll: Vec<Vec<f64>>,
    /// Epoch whose parameters were kept (argmin of `holdout_nll`).
    pub stopping_epoch: usize,
    pub epochs_run: usize,
    pub holdout_split_seed: u64,
    pub n_train: usize,
    pub n_holdout: usize,
}

impl TrainReport {
    pub fn final_holdout_nll(&self) -> f64 {
        self.holdout_nll[self.stopping_epoch]
    }
}

/// Builds (input, target) rows from real transitions. Targets are
/// (reward, s' - s) under delta prediction, else (reward, s').
fn build_rows(ens: &EnsembleModel, data: &[Transition]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut inputs = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for t in data {
        let mut x = Vec::with_capacity(ens.state_dim() + ens.action_dim());
        x.extend_from_slice(&t.state);
        x.extend_from_slice(&t.action);
        inputs.push(x);
        let mut y = Vec::with_capacity(ens.out_dim());
        y.push(t.reward);
        if ens.cfg.predict_delta {
            y.extend(t.next_state.iter().zip(&t.state).map(|(n, s)| n - s));
        } else {
            y.extend_from_slice(&t.next_state);
        }
        targets.push(y);
    }
    (inputs, targets)
}

/// Taped Gaussian NLL (normalized space) for one member over one batch,
/// including the logvar-bound regularizer. Returns (loss var, leaves).
fn nll_loss_on_tape(
    tape: &mut Tape,
    member: &MemberNet,
    bound_reg: f64,
    x: &DenseArray,
    t: &DenseArray,
) -> Result<(Var, Vec<Var>)> {
    let d = t.dims2()?.1;
    let trunk_vars = member.trunk.vars(tape);
    let lv_max = tape.leaf(member.logvar_max.clone());
    let lv_min = tape.leaf(member.logvar_min.clone());

    let xv = tape.leaf(x.clone());
    let tv = tape.leaf(t.clone());
    let out = member.trunk.forward_tape(tape, &trunk_vars, xv)?;
    let mean = tape.slice_cols(out, 0, d)?;
    let raw_lv = tape.slice_cols(out, d, d)?;

    // lv = max - softplus(max - raw); lv = min + softplus(lv - min)
    let neg_raw = tape.neg(raw_lv)?;
    let max_minus_raw = tape.add_row(neg_raw, lv_max)?;
    let sp1 = tape.softplus(max_minus_raw)?;
    let neg_sp1 = tape.neg(sp1)?;
    let lv_upper = tape.add_row(neg_sp1, lv_max)?;
    let neg_min = tape.neg(lv_min)?;
    let lv_shift = tape.add_row(lv_upper, neg_min)?;
    let sp2 = tape.softplus(lv_shift)?;
    let lv = tape.add_row(sp2, lv_min)?;

    // nll = 0.5 * ((t - mean)^2 * exp(-lv) + lv + ln(2 pi)) summed over dims
    let diff = tape.sub(tv, mean)?;
    let sq = tape.square(diff)?;
    let neg_lv = tape.neg(lv)?;
    let inv_var = tape.exp(neg_lv)?;
    let mahal = tape.mul(sq, inv_var)?;
    let inner = tape.add(mahal, lv)?;
    let shifted = tape.add_scalar(inner, (2.0 * std::f64::consts::PI).ln())?;
    let per_sample = tape.row_sum(shifted)?;
    let half = tape.mul_scalar(per_sample, 0.5)?;
    let nll = tape.mean_all(half)?;

    // bound regularizer keeps the learned ceiling/floor tight
    let max_sum = tape.sum_all(lv_max)?;
    let min_sum = tape.sum_all(lv_min)?;
    let spread = tape.sub(max_sum, min_sum)?;
    let reg = tape.mul_scalar(spread, bound_reg)?;
    let loss = tape.add(nll, reg)?;

    let mut leaves = Vec::new();
    leaves.extend(trunk_vars.weights.iter().copied().zip(trunk_vars.biases.iter().copied()).flat_map(|(w, b)| [w, b]));
    leaves.push(lv_max);
    leaves.push(lv_min);
    Ok((loss, leaves))
}

/// Pure (no-tape) mean NLL of one member over rows in normalized space.
fn member_nll(member: &MemberNet, norm: &Normalizer, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    let d = targets[0].len();
    let mut total = 0.0;
    let lvm = member.logvar_max.data();
    let lvn = member.logvar_min.data();
    for (x, t) in inputs.iter().zip(targets) {
        let out = member.trunk.forward_one(&norm.normalize_input(x))?;
        let tn = norm.normalize_target(t);
        for i in 0..d {
            let lv = super::bound_logvar(out[d + i], lvm[i], lvn[i]);
            let diff = tn[i] - out[i];
            total += 0.5 * (diff * diff * (-lv).exp() + lv + (2.0 * std::f64::consts::PI).ln());
        }
    }
    Ok(total / inputs.len() as f64)
}

/// Trains all members with early stopping on a shared holdout.
pub fn train_ensemble(
    ens: &mut EnsembleModel,
    data: &[Transition],
    cfg: &ModelTrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(CoreError::Invalid("empty training dataset".into()));
    }
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) {
        return Err(CoreError::Config(format!(
            "holdout fraction must be in (0,1), got {}",
            cfg.holdout_fraction
        )));
    }
    let n = data.len();
    let n_holdout = ((n as f64 * cfg.holdout_fraction).round() as usize).clamp(1, n - 1);
    let n_train = n - n_holdout;
    if n_train < cfg.batch_size {
        return Err(CoreError::Invalid(format!(
            "training split ({n_train}) smaller than one minibatch ({})",
            cfg.batch_size
        )));
    }

    // split
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = rng::stream(seed, "model-holdout-split");
    order.shuffle(&mut split_rng);
    let train_idx = &order[..n_train];
    let holdout_idx = &order[n_train..];

    let (all_inputs, all_targets) = build_rows(ens, data);
    let train_inputs: Vec<Vec<f64>> = train_idx.iter().map(|&i| all_inputs[i].clone()).collect();
    let train_targets: Vec<Vec<f64>> = train_idx.iter().map(|&i| all_targets[i].clone()).collect();
    let holdout_inputs: Vec<Vec<f64>> = holdout_idx.iter().map(|&i| all_inputs[i].clone()).collect();
    let holdout_targets: Vec<Vec<f64>> = holdout_idx.iter().map(|&i| all_targets[i].clone()).collect();

    // freeze normalization from the training split
    ens.normalizer = Normalizer::from_data(&train_inputs, &train_targets);
    let train_x_norm: Vec<Vec<f64>> = train_inputs
        .iter()
        .map(|r| ens.normalizer.normalize_input(r))
        .collect();
    let train_t_norm: Vec<Vec<f64>> = train_targets
        .iter()
        .map(|r| ens.normalizer.normalize_target(r))
        .collect();

    // fresh members and optimizers (different random initialization per call)
    let k = ens.members.len();
    for (i, member) in ens.members.iter_mut().enumerate() {
        let mut r = rng::stream_indexed(seed, "member-init", i as u64);
        *member = MemberNet::new(
            ens.state_dim + ens.action_dim,
            1 + ens.state_dim,
            &ens.cfg.hidden,
            &mut r,
        )?;
    }
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut opt_states: Vec<AdamState> = ens
        .members
        .iter()
        .map(|m| AdamState::new_like(&m.params()))
        .collect();
    let mut shuffle_rngs: Vec<_> = (0..k)
        .map(|i| rng::stream_indexed(seed, "member-shuffle", i as u64))
        .collect();

    let mut train_nll: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut member_holdout_nll: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut holdout_nll: Vec<f64> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_nll = f64::INFINITY;
    let mut best_members: Option<Vec<MemberNet>> = None;

    for epoch in 0..cfg.max_epochs {
        for m in 0..k {
            let mut idx: Vec<usize> = (0..n_train).collect();
            idx.shuffle(&mut shuffle_rngs[m]);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in idx.chunks(cfg.batch_size) {
                if chunk.len() < cfg.batch_size && batches > 0 {
                    // drop ragged tail batches once at least one full batch ran
                    continue;
                }
                let x = DenseArray::from_rows(
                    &chunk.iter().map(|&i| train_x_norm[i].clone()).collect::<Vec<_>>(),
                )?;
                let t = DenseArray::from_rows(
                    &chunk.iter().map(|&i| train_t_norm[i].clone()).collect::<Vec<_>>(),
                )?;
                let mut tape = Tape::new();
                let (loss, leaves) = nll_loss_on_tape(&mut tape, &ens.members[m], ens.cfg.bound_reg, &x, &t)?;
                epoch_loss += tape.value(loss).item()?;
                batches += 1;
                let mut grads = tape.backward(loss)?;
                let grad_arrays: Vec<DenseArray> = leaves
                    .iter()
                    .map(|v| grads.take_or_zeros(*v, tape.value(*v).shape()))
                    .collect();
                let mut params = ens.members[m].params_mut();
                opt_states[m].step(&adam_cfg, &mut params, &grad_arrays)?;
            }
            train_nll[m].push(epoch_loss / batches.max(1) as f64);
        }

        let mut epoch_holdout = 0.0;
        for m in 0..k {
            let h = member_nll(&ens.members[m], &ens.normalizer, &holdout_inputs, &holdout_targets)?;
            member_holdout_nll[m].push(h);
            epoch_holdout += h / k as f64;
        }
        holdout_nll.push(epoch_holdout);

        if epoch_holdout < best_nll {
            best_nll = epoch_holdout;
            best_epoch = epoch;
            best_members = Some(ens.members.clone());
        } else if epoch - best_epoch > cfg.patience {
            break;
        }
    }

    if let Some(best) = best_members {
        ens.members = best;
    }
    let epochs_run = holdout_nll.len();
    ens.trained_epochs += epochs_run;

    Ok(TrainReport {
        train_nll,
        holdout_nll,
        member_holdout_nll,
        stopping_epoch: best_epoch,
        epochs_run,
        holdout_split_seed: seed,
        n_train,
        n_holdout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EnsembleConfig;
    use rand::Rng;

    fn linear_system_data(n: usize, noise_std: f64, seed: u64) -> Vec<Transition> {
        // s' = A s + B a, r = c . s; optional Gaussian output noise
        let mut r = rng::stream(seed, "linsys");
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        use rand_distr::Distribution;
        (0..n)
            .map(|_| {
                let s = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
                let a = vec![r.gen_range(-1.0..1.0)];
                let next = vec![
                    0.9 * s[0] + 0.1 * s[1] + 0.2 * a[0] + noise_std * normal.sample(&mut r),
                    -0.1 * s[0] + 0.8 * s[1] + 0.5 * a[0] + noise_std * normal.sample(&mut r),
                ];
                let reward = s[0] - 0.5 * s[1] + noise_std * normal.sample(&mut r);
                Transition::real(s, a, reward, next, false)
            })
            .collect()
    }

    fn small_cfg() -> (EnsembleConfig, ModelTrainConfig) {
        (
            EnsembleConfig {
                members: 3,
                hidden: vec![32, 32],
                ..EnsembleConfig::default()
            },
            ModelTrainConfig {
                max_epochs: 60,
                batch_size: 64,
                lr: 3e-3,
                ..ModelTrainConfig::default()
            },
        )
    }

    #[test]
    fn noiseless_linear_system_drives_holdout_nll_down() {
        let (ecfg, tcfg) = small_cfg();
        let mut ens = EnsembleModel::new(2, 1, ecfg, 0).unwrap();
        let data = linear_system_data(1000, 0.0, 1);
        let report = train_ensemble(&mut ens, &data, &tcfg, 7).unwrap();
        assert!(ens.is_trained());
        assert!(
            report.final_holdout_nll() < report.holdout_nll[0],
            "holdout NLL should improve: {:?}",
            report.holdout_nll
        );
        // predicted variances shrink toward the floor on a deterministic system
        let pred = ens.predict_member(0, &[0.3, -0.2], &[0.4]).unwrap();
        assert!(pred.var.iter().all(|&v| v < 1e-2), "vars {:?}", pred.var);
    }

    #[test]
    fn learned_sigma_recovers_injected_noise() {
        let (ecfg, tcfg) = small_cfg();
        let mut ens = EnsembleModel::new(2, 1, ecfg, 3).unwrap();
        let data = linear_system_data(4000, 0.1, 4);
        let report = train_ensemble(&mut ens, &data, &tcfg, 11).unwrap();
        assert!(report.epochs_run >= 2);

        // average learned sigma over holdout-like fresh queries
        let probe = linear_system_data(200, 0.0, 99);
        let mut sigma_sum = 0.0;
        let mut count = 0.0;
        for t in &probe {
            let pred = ens.predict_member(0, &t.state, &t.action).unwrap();
            for v in &pred.var {
                sigma_sum += v.sqrt();
                count += 1.0;
            }
        }
        let mean_sigma = sigma_sum / count;
        assert!(
            (0.07..=0.13).contains(&mean_sigma),
            "learned sigma {mean_sigma}"
        );
    }

    #[test]
    fn trained_member_beats_constant_predictor() {
        let (ecfg, tcfg) = small_cfg();
        let mut ens = EnsembleModel::new(2, 1, ecfg, 5).unwrap();
        let data = linear_system_data(1000, 0.0, 6);
        train_ensemble(&mut ens, &data, &tcfg, 13).unwrap();

        let probe = linear_system_data(500, 0.0, 123);
        // constant predictor: mean target over the probe set
        let dim = 3;
        let mut target_mean = vec![0.0; dim];
        for t in &probe {
            target_mean[0] += t.reward / probe.len() as f64;
            for i in 0..2 {
                target_mean[1 + i] += t.next_state[i] / probe.len() as f64;
            }
        }
        let mut mse_model = 0.0;
        let mut mse_const = 0.0;
        for t in &probe {
            let pred = ens.predict_member(0, &t.state, &t.action).unwrap();
            let truth = [t.reward, t.next_state[0], t.next_state[1]];
            for i in 0..dim {
                mse_model += (pred.mean[i] - truth[i]).powi(2);
                mse_const += (target_mean[i] - truth[i]).powi(2);
            }
        }
        let rmse_model = (mse_model / probe.len() as f64).sqrt();
        let rmse_const = (mse_const / probe.len() as f64).sqrt();
        assert!(
            rmse_model * 5.0 <= rmse_const,
            "model rmse {rmse_model} vs constant rmse {rmse_const}"
        );
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let (ecfg, mut tcfg) = small_cfg();
        tcfg.patience = 0;
        tcfg.max_epochs = 100;
        let mut ens = EnsembleModel::new(2, 1, ecfg, 2).unwrap();
        let data = linear_system_data(300, 0.3, 8);
        let report = train_ensemble(&mut ens, &data, &tcfg, 21).unwrap();
        // first epoch e with holdout[e] >= holdout[best] ends the run
        assert!(report.epochs_run <= report.stopping_epoch + 2);
        let min = report
            .holdout_nll
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.holdout_nll[report.stopping_epoch], min);
    }

    #[test]
    fn training_is_deterministic_in_seed_and_data() {
        let (ecfg, mut tcfg) = small_cfg();
        tcfg.max_epochs = 5;
        let data = linear_system_data(400, 0.05, 10);
        let run = || {
            let mut ens = EnsembleModel::new(2, 1, ecfg.clone(), 9).unwrap();
            train_ensemble(&mut ens, &data, &tcfg, 17).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.holdout_nll, b.holdout_nll);
        assert_eq!(a.train_nll, b.train_nll);
        assert_eq!(a.stopping_epoch, b.stopping_epoch);
    }

    #[test]
    fn rejects_dataset_smaller_than_one_minibatch() {
        let (ecfg, tcfg) = small_cfg();
        let mut ens = EnsembleModel::new(2, 1, ecfg, 0).unwrap();
        let data = linear_system_data(40, 0.0, 0);
        assert!(train_ensemble(&mut ens, &data, &tcfg, 0).is_err());
    }
}
