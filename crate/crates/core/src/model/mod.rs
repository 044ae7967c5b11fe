//! Probabilistic ensemble dynamics model.
//!
//! K independent diagonal-Gaussian networks map (state, action) to a
//! distribution over (reward, next state). Members share input/output
//! normalization statistics (frozen from the training split) but are trained
//! with their own shuffling and initialization. Inference randomly picks one
//! member; the One-vs-Rest uncertainty score is the KL divergence from that
//! member's prediction to the moment-merged Gaussian of the remaining K-1
//! members.

mod train;

pub use train::{train_ensemble, ModelTrainConfig, TrainReport};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use m2ac_nn::{Activation, Checkpoint, DenseArray, Mlp};

use crate::error::{CoreError, Result};
use crate::rng;

/// Diagonal Gaussian over the concatenated (reward, next-state) vector.
/// `mean[0]` / `var[0]` is the reward dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianPrediction {
    pub fn reward_mean(&self) -> f64 {
        self.mean[0]
    }

    pub fn state_mean(&self) -> &[f64] {
        &self.mean[1..]
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One ensemble member: an MLP trunk with mean and raw log-variance heads,
/// plus learned per-dimension log-variance bounds (soft ceiling/floor).
#[derive(Debug, Clone)]
pub struct MemberNet {
    pub(crate) trunk: Mlp,
    pub(crate) logvar_max: DenseArray,
    pub(crate) logvar_min: DenseArray,
}

impl MemberNet {
    fn new(in_dim: usize, out_dim: usize, hidden: &[usize], rng: &mut Pcg64) -> Result<Self> {
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * out_dim);
        Ok(Self {
            trunk: Mlp::new(&widths, Activation::Swish, rng)?,
            logvar_max: DenseArray::full(vec![1, out_dim], 0.5)?,
            logvar_min: DenseArray::full(vec![1, out_dim], -10.0)?,
        })
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut out = self.trunk.params_mut();
        out.push(&mut self.logvar_max);
        out.push(&mut self.logvar_min);
        out
    }

    pub(crate) fn params(&self) -> Vec<&DenseArray> {
        let mut out = self.trunk.params();
        out.push(&self.logvar_max);
        out.push(&self.logvar_min);
        out
    }
}

/// Soft-bounds a raw log-variance between learned min/max:
/// lv = max - softplus(max - raw), then lv = min + softplus(lv - min).
pub(crate) fn bound_logvar(raw: f64, lv_max: f64, lv_min: f64) -> f64 {
    fn softplus(x: f64) -> f64 {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
    let lv = lv_max - softplus(lv_max - raw);
    lv_min + softplus(lv - lv_min)
}

/// Input/target standardization frozen from a training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub t_mean: Vec<f64>,
    pub t_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_mean: vec![0.0; in_dim],
            in_std: vec![1.0; in_dim],
            t_mean: vec![0.0; out_dim],
            t_std: vec![1.0; out_dim],
        }
    }

    pub(crate) fn from_data(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Self {
        fn stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
            let d = rows[0].len();
            let n = rows.len() as f64;
            let mut mean = vec![0.0; d];
            for r in rows {
                for (m, x) in mean.iter_mut().zip(r) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for r in rows {
                for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            let std = var
                .iter()
                .map(|v| {
                    let s = (v / n).sqrt();
                    // constant dimensions pass through unscaled
                    if s < 1e-6 {
                        1.0
                    } else {
                        s
                    }
                })
                .collect();
            (mean, std)
        }
        let (in_mean, in_std) = stats(inputs);
        let (t_mean, t_std) = stats(targets);
        Self {
            in_mean,
            in_std,
            t_mean,
            t_std,
        }
    }

    pub(crate) fn normalize_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub(crate) fn normalize_target(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.t_mean.iter().zip(&self.t_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Number of members; must be >= 2 for One-vs-Rest estimation.
    pub members: usize,
    pub hidden: Vec<usize>,
    /// Predict the state delta s' - s rather than s' directly.
    pub predict_delta: bool,
    /// Floor applied to denormalized predicted variances.
    pub var_floor: f64,
    /// Weight of the (sum max_logvar - sum min_logvar) regularizer.
    pub bound_reg: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![200, 200, 200, 200],
            predict_delta: true,
            var_floor: 1e-8,
            bound_reg: 0.01,
        }
    }
}

pub struct EnsembleModel {
    pub(crate) cfg: EnsembleConfig,
    pub(crate) members: Vec<MemberNet>,
    pub(crate) normalizer: Normalizer,
    state_dim: usize,
    action_dim: usize,
    /// Cumulative NLL epochs across training calls; zero means untrained.
    pub(crate) trained_epochs: usize,
}

impl EnsembleModel {
    pub fn new(state_dim: usize, action_dim: usize, cfg: EnsembleConfig, seed: u64) -> Result<Self> {
        if cfg.members < 2 {
            return Err(CoreError::Config(format!(
                "ensemble needs K >= 2 members, got {}",
                cfg.members
            )));
        }
        if state_dim == 0 || action_dim == 0 {
            return Err(CoreError::Config("zero state/action dimension".into()));
        }
        let in_dim = state_dim + action_dim;
        let out_dim = 1 + state_dim;
        let members = (0..cfg.members)
            .map(|k| {
                let mut r = rng::stream_indexed(seed, "member-init", k as u64);
                MemberNet::new(in_dim, out_dim, &cfg.hidden, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            normalizer: Normalizer::identity(in_dim, out_dim),
            members,
            cfg,
            state_dim,
            action_dim,
            trained_epochs: 0,
        })
    }

    pub fn members(&self) -> usize {
        self.members.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn out_dim(&self) -> usize {
        1 + self.state_dim
    }

    pub fn is_trained(&self) -> bool {
        self.trained_epochs > 0
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    fn validate_query(&self, k: usize, state: &[f64], action: &[f64]) -> Result<()> {
        if k >= self.members.len() {
            return Err(CoreError::Invalid(format!(
                "member index {k} out of range for K={}",
                self.members.len()
            )));
        }
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(CoreError::Invalid(format!(
                "query dims ({}, {}) do not match model dims ({}, {})",
                state.len(),
                action.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        if !state.iter().chain(action.iter()).all(|x| x.is_finite()) {
            return Err(CoreError::Invalid("NaN/Inf in model query".into()));
        }
        Ok(())
    }

    /// Member k's diagonal-Gaussian prediction over (reward, next state),
    /// denormalized into environment units.
    pub fn predict_member(&self, k: usize, state: &[f64], action: &[f64]) -> Result<GaussianPrediction> {
        self.validate_query(k, state, action)?;
        let mut input = Vec::with_capacity(state.len() + action.len());
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        let normed = self.normalizer.normalize_input(&input);
        let raw = self.members[k].trunk.forward_one(&normed)?;
        let d = self.out_dim();

        let mut mean = Vec::with_capacity(d);
        let mut var = Vec::with_capacity(d);
        let lv_max = self.members[k].logvar_max.data();
        let lv_min = self.members[k].logvar_min.data();
        for i in 0..d {
            let m = raw[i] * self.normalizer.t_std[i] + self.normalizer.t_mean[i];
            let lv = bound_logvar(raw[d + i], lv_max[i], lv_min[i]);
            let v = lv.exp() * self.normalizer.t_std[i] * self.normalizer.t_std[i];
            mean.push(m);
            var.push(v.max(self.cfg.var_floor));
        }
        if self.cfg.predict_delta {
            for (m, s) in mean[1..].iter_mut().zip(state) {
                *m += s;
            }
        }
        if !mean.iter().chain(var.iter()).all(|x| x.is_finite()) {
            return Err(CoreError::Invalid("non-finite model prediction".into()));
        }
        Ok(GaussianPrediction { mean, var })
    }

    /// All K member predictions at (s, a).
    pub fn predict_all(&self, state: &[f64], action: &[f64]) -> Result<Vec<GaussianPrediction>> {
        (0..self.members.len())
            .map(|k| self.predict_member(k, state, action))
            .collect()
    }

    /// Uniformly picks a member and draws one (reward, next state) sample
    /// from its prediction.
    pub fn sample_transition(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut Pcg64,
    ) -> Result<(usize, f64, Vec<f64>)> {
        let k = rng.gen_range(0..self.members.len());
        let pred = self.predict_member(k, state, action)?;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let draws: Vec<f64> = pred
            .mean
            .iter()
            .zip(&pred.var)
            .map(|(m, v)| m + v.sqrt() * normal.sample(rng))
            .collect();
        Ok((k, draws[0], draws[1..].to_vec()))
    }

    /// Moment-merged Gaussian of the K-1 members other than k:
    /// mu = mean of means, var = mean(var_i + mu_i^2) - mu^2.
    pub fn merge_rest(&self, k: usize, state: &[f64], action: &[f64]) -> Result<GaussianPrediction> {
        self.validate_query(k, state, action)?;
        let preds = self.predict_all(state, action)?;
        let rest: Vec<&GaussianPrediction> = preds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, p)| p)
            .collect();
        Ok(merge_gaussians(&rest, self.cfg.var_floor))
    }

    /// Moment-merged Gaussian of all K members.
    pub fn merge_all(&self, state: &[f64], action: &[f64]) -> Result<GaussianPrediction> {
        let preds = self.predict_all(state, action)?;
        let all: Vec<&GaussianPrediction> = preds.iter().collect();
        Ok(merge_gaussians(&all, self.cfg.var_floor))
    }

    /// One-vs-Rest uncertainty: KL from member k's prediction to the merged
    /// prediction of the other K-1 members, summed over output dimensions.
    pub fn ovr_uncertainty(&self, k: usize, state: &[f64], action: &[f64]) -> Result<f64> {
        let member = self.predict_member(k, state, action)?;
        let rest = self.merge_rest(k, state, action)?;
        gaussian_kl(&member, &rest)
    }

    /// One-vs-All variant: KL from member k to the merge of all K members.
    pub fn ova_uncertainty(&self, k: usize, state: &[f64], action: &[f64]) -> Result<f64> {
        let member = self.predict_member(k, state, action)?;
        let all = self.merge_all(state, action)?;
        gaussian_kl(&member, &all)
    }

    /// Negative log-density of a sampled (reward, next state) under the
    /// all-members merged Gaussian.
    pub fn neg_likelihood_uncertainty(
        &self,
        state: &[f64],
        action: &[f64],
        sampled_reward: f64,
        sampled_next: &[f64],
    ) -> Result<f64> {
        let merged = self.merge_all(state, action)?;
        if sampled_next.len() + 1 != merged.dim() {
            return Err(CoreError::Invalid("sampled transition dim mismatch".into()));
        }
        let mut nll = 0.0;
        let two_pi = 2.0 * std::f64::consts::PI;
        for (i, (m, v)) in merged.mean.iter().zip(&merged.var).enumerate() {
            let x = if i == 0 { sampled_reward } else { sampled_next[i - 1] };
            nll += 0.5 * ((two_pi * v).ln() + (x - m) * (x - m) / v);
        }
        Ok(nll)
    }

    /// Writes every member's parameters plus normalization statistics.
    pub fn write_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) {
        for (k, member) in self.members.iter().enumerate() {
            let names = member.trunk.param_names(&format!("{prefix}/member{k}"));
            ck.insert_all(&names, member.trunk.params());
            ck.insert(format!("{prefix}/member{k}/logvar_max"), member.logvar_max.clone());
            ck.insert(format!("{prefix}/member{k}/logvar_min"), member.logvar_min.clone());
        }
        for (name, vals) in [
            ("in_mean", &self.normalizer.in_mean),
            ("in_std", &self.normalizer.in_std),
            ("t_mean", &self.normalizer.t_mean),
            ("t_std", &self.normalizer.t_std),
        ] {
            ck.insert(
                format!("{prefix}/norm/{name}"),
                DenseArray::new(vec![1, vals.len()], vals.clone()).expect("finite stats"),
            );
        }
    }
}

/// Moment merge of a uniform mixture of diagonal Gaussians.
pub fn merge_gaussians(preds: &[&GaussianPrediction], var_floor: f64) -> GaussianPrediction {
    let d = preds[0].dim();
    let n = preds.len() as f64;
    let mut mean = vec![0.0; d];
    for p in preds {
        for (m, x) in mean.iter_mut().zip(&p.mean) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for p in preds {
        for i in 0..d {
            var[i] += (p.var[i] + p.mean[i] * p.mean[i]) / n;
        }
    }
    for i in 0..d {
        var[i] = (var[i] - mean[i] * mean[i]).max(var_floor);
    }
    GaussianPrediction { mean, var }
}

/// Closed-form KL between diagonal Gaussians, summed over dimensions:
/// sum_i [ ln(s2/s1) + (v1 + (m1-m2)^2) / (2 v2) - 1/2 ].
pub fn gaussian_kl(p: &GaussianPrediction, q: &GaussianPrediction) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(CoreError::Invalid("KL dimension mismatch".into()));
    }
    if p.var.iter().chain(q.var.iter()).any(|&v| v <= 0.0) {
        return Err(CoreError::Invalid("KL requires positive variances".into()));
    }
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let (m1, v1) = (p.mean[i], p.var[i]);
        let (m2, v2) = (q.mean[i], q.var[i]);
        kl += 0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
    }
    // tiny negative values are cancellation noise on identical inputs
    Ok(kl.max(0.0))
}

/// Which score drives the rank-based mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyEstimator {
    #[default]
    OneVsRest,
    OneVsAll,
    NegLikelihood,
}

impl UncertaintyEstimator {
    /// Scores one sampled model transition.
    pub fn score(
        &self,
        ens: &EnsembleModel,
        k: usize,
        state: &[f64],
        action: &[f64],
        sampled_reward: f64,
        sampled_next: &[f64],
    ) -> Result<f64> {
        match self {
            UncertaintyEstimator::OneVsRest => ens.ovr_uncertainty(k, state, action),
            UncertaintyEstimator::OneVsAll => ens.ova_uncertainty(k, state, action),
            UncertaintyEstimator::NegLikelihood => {
                ens.neg_likelihood_uncertainty(state, action, sampled_reward, sampled_next)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_ensemble(k: usize, seed: u64) -> EnsembleModel {
        EnsembleModel::new(
            2,
            1,
            EnsembleConfig {
                members: k,
                hidden: vec![16, 16],
                ..EnsembleConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn rejects_single_member() {
        assert!(EnsembleModel::new(
            2,
            1,
            EnsembleConfig {
                members: 1,
                ..EnsembleConfig::default()
            },
            0
        )
        .is_err());
    }

    #[test]
    fn untrained_member_with_zero_heads_predicts_offset_and_default_variance() {
        let mut ens = tiny_ensemble(2, 0);
        for p in ens.members[0].trunk.params_mut() {
            p.data_mut().fill(0.0);
        }
        let pred = ens.predict_member(0, &[0.3, -0.7], &[0.1]).unwrap();
        // identity normalizer: mean = t_mean (+ state for delta dims)
        assert_eq!(pred.reward_mean(), 0.0);
        assert_eq!(pred.state_mean(), &[0.3, -0.7]);
        let default_var = bound_logvar(0.0, 0.5, -10.0).exp();
        for v in &pred.var {
            assert!((v - default_var).abs() < 1e-12);
            assert!(v.is_finite());
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let ens = tiny_ensemble(3, 5);
        let a = ens.predict_member(1, &[0.5, 0.5], &[-0.2]).unwrap();
        let b = ens.predict_member(1, &[0.5, 0.5], &[-0.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_query_rejected() {
        let ens = tiny_ensemble(2, 1);
        assert!(ens.predict_member(0, &[f64::NAN, 0.0], &[0.0]).is_err());
        assert!(ens.predict_member(5, &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn member_choice_is_uniform() {
        let ens = tiny_ensemble(4, 2);
        let mut rng = crate::rng::stream(0, "sample-test");
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let (k, _, _) = ens.sample_transition(&[0.1, 0.2], &[0.0], &mut rng).unwrap();
            counts[k] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.02, "member frequency {freq}");
        }
    }

    #[test]
    fn sampling_is_reproducible_given_seed() {
        let ens = tiny_ensemble(3, 9);
        let draw = |seed| {
            let mut rng = crate::rng::stream(seed, "sample-repro");
            ens.sample_transition(&[0.4, -0.1], &[0.6], &mut rng).unwrap()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn floored_variance_concentrates_samples_at_member_means() {
        let mut ens = tiny_ensemble(2, 3);
        // pin both members to the same parameters, then force variances to
        // the floor so samples collapse onto the shared mean
        let reference = ens.members[0].clone();
        for member in &mut ens.members {
            *member = reference.clone();
            member.logvar_max.data_mut().fill(-40.0);
            member.logvar_min.data_mut().fill(-45.0);
        }
        let pred = ens.predict_member(0, &[0.2, 0.2], &[0.0]).unwrap();
        assert!(pred.var.iter().all(|&v| (v - 1e-8).abs() < 1e-20));

        let mut rng = crate::rng::stream(1, "floor-test");
        let n = 10_000;
        let mut sumsq = vec![0.0; pred.dim()];
        for _ in 0..n {
            let (_, r, s) = ens.sample_transition(&[0.2, 0.2], &[0.0], &mut rng).unwrap();
            sumsq[0] += (r - pred.mean[0]).powi(2);
            for (i, x) in s.iter().enumerate() {
                sumsq[i + 1] += (x - pred.mean[i + 1]).powi(2);
            }
        }
        let floor_std = 1e-8f64.sqrt();
        for ss in sumsq {
            let std = (ss / n as f64).sqrt();
            assert!(std <= 2.0 * floor_std, "per-dim sample std {std}");
        }
    }

    #[test]
    fn merge_rest_identical_members_is_identity() {
        // K = 3, rest members both N(0,1) per dim -> merged N(0,1)
        let p = GaussianPrediction {
            mean: vec![0.0],
            var: vec![1.0],
        };
        let merged = merge_gaussians(&[&p, &p], 1e-12);
        assert!((merged.mean[0]).abs() < 1e-15);
        assert!((merged.var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn merge_rest_two_separated_members() {
        // rest members N(0,1), N(2,1): mu = 1, var = ((1+0)+(1+4))/2 - 1 = 2
        let a = GaussianPrediction {
            mean: vec![0.0],
            var: vec![1.0],
        };
        let b = GaussianPrediction {
            mean: vec![2.0],
            var: vec![1.0],
        };
        let merged = merge_gaussians(&[&a, &b], 1e-12);
        assert!((merged.mean[0] - 1.0).abs() < 1e-15);
        assert!((merged.var[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn merge_matches_mixture_simulation() {
        let preds: Vec<GaussianPrediction> = (0..5)
            .map(|i| GaussianPrediction {
                mean: vec![i as f64 * 0.7 - 1.0],
                var: vec![0.3 + 0.2 * i as f64],
            })
            .collect();
        let refs: Vec<&GaussianPrediction> = preds.iter().collect();
        let merged = merge_gaussians(&refs, 1e-12);

        let mut rng = crate::rng::stream(8, "mixture");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let k = rng.gen_range(0..5);
            let x = preds[k].mean[0] + preds[k].var[0].sqrt() * normal.sample(&mut rng);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - merged.mean[0]).abs() / merged.var[0].sqrt() < 0.01);
        assert!((var - merged.var[0]).abs() / merged.var[0] < 0.01);
    }

    #[test]
    fn kl_zero_for_identical_and_known_value_for_shifted() {
        let p = GaussianPrediction {
            mean: vec![3.0],
            var: vec![1.0],
        };
        let q = GaussianPrediction {
            mean: vec![0.0],
            var: vec![1.0],
        };
        assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
        // KL(N(3,1) || N(0,1)) = 9/2
        assert!((gaussian_kl(&p, &q).unwrap() - 4.5).abs() < 1e-14);
    }

    #[test]
    fn ovr_and_ova_are_zero_for_degenerate_ensemble() {
        let mut ens = tiny_ensemble(3, 4);
        let reference = ens.members[0].clone();
        for member in &mut ens.members {
            *member = reference.clone();
        }
        assert_eq!(ens.ovr_uncertainty(1, &[0.3, 0.4], &[0.5]).unwrap(), 0.0);
        assert_eq!(ens.ova_uncertainty(1, &[0.3, 0.4], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn neg_likelihood_at_mean_of_unit_variance_merge() {
        let mut ens = tiny_ensemble(2, 6);
        // identical members with zero trunks and wide-open logvar bounds so
        // the bounded logvar stays exactly 0 -> N(mean, 1) per dimension
        let reference = ens.members[0].clone();
        for member in &mut ens.members {
            *member = reference.clone();
            for p in member.trunk.params_mut() {
                p.data_mut().fill(0.0);
            }
            member.logvar_max.data_mut().fill(1e9);
            member.logvar_min.data_mut().fill(-1e9);
        }
        let merged = ens.merge_all(&[0.1, 0.2], &[0.0]).unwrap();
        assert!(merged.var.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let nll = ens
            .neg_likelihood_uncertainty(&[0.1, 0.2], &[0.0], merged.mean[0], &merged.mean[1..])
            .unwrap();
        // 0.5 ln(2 pi) per dimension at the mean
        let per_dim = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((nll - 3.0 * per_dim).abs() < 1e-9, "nll {nll}");
    }

    #[test]
    fn ovr_nonnegative_on_random_ensembles() {
        for seed in 0..5 {
            let ens = tiny_ensemble(4, seed);
            for k in 0..4 {
                let u = ens.ovr_uncertainty(k, &[0.1, -0.5], &[0.8]).unwrap();
                assert!(u >= 0.0);
            }
        }
    }
}
