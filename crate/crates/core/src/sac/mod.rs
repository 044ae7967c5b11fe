//! Soft actor-critic on a mixed real/model experience buffer.
//!
//! Twin critics with min-target bootstrapping, a squashed-Gaussian policy,
//! and a learned entropy temperature targeting -action_dim. Model-sourced
//! samples enter the TD target through their stored penalized reward, which
//! is what makes the critic learn a lower-bounded value estimate.

mod buffer;
mod policy;

pub use buffer::ReplayBuffer;
pub use policy::{ActionScaler, LOG_STD_MAX, LOG_STD_MIN};

use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use m2ac_nn::{Activation, AdamConfig, AdamState, Checkpoint, DenseArray, Mlp, Tape};

use crate::error::{CoreError, Result};
use crate::rng;
use crate::types::{Source, Transition};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Soft target update rate.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub initial_temperature: f64,
    /// Learn the temperature (targeting `target_entropy`) or keep it fixed.
    pub learned_temperature: bool,
    /// Defaults to -action_dim when absent.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            initial_temperature: 0.2,
            learned_temperature: true,
            target_entropy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub temperature: f64,
    pub mean_q: f64,
    pub model_fraction: f64,
}

pub struct SacAgent {
    cfg: SacConfig,
    state_dim: usize,
    action_dim: usize,
    scaler: ActionScaler,
    policy: Mlp,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_temperature: f64,
    target_entropy: f64,
    policy_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    temp_opt_m: f64,
    temp_opt_v: f64,
    temp_opt_t: u64,
}

impl SacAgent {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        cfg: SacConfig,
        seed: u64,
    ) -> Result<Self> {
        if action_low.len() != action_dim || action_high.len() != action_dim {
            return Err(CoreError::Config("action bounds length mismatch".into()));
        }
        if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
            return Err(CoreError::Config(format!(
                "gamma must be in (0,1), got {}",
                cfg.gamma
            )));
        }
        if !(cfg.initial_temperature > 0.0) {
            return Err(CoreError::Config("initial temperature must be > 0".into()));
        }
        let mut policy_widths = vec![state_dim];
        policy_widths.extend_from_slice(&cfg.hidden);
        policy_widths.push(2 * action_dim);
        let mut q_widths = vec![state_dim + action_dim];
        q_widths.extend_from_slice(&cfg.hidden);
        q_widths.push(1);

        let mut policy = Mlp::new(
            &policy_widths,
            Activation::Relu,
            &mut rng::stream(seed, "sac-policy-init"),
        )?;
        // near-zero head keeps early actions centered and log-std mid-range
        policy.scale_output_layer(0.01);
        let q1 = Mlp::new(
            &q_widths,
            Activation::Relu,
            &mut rng::stream(seed, "sac-q1-init"),
        )?;
        let q2 = Mlp::new(
            &q_widths,
            Activation::Relu,
            &mut rng::stream(seed, "sac-q2-init"),
        )?;
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let policy_opt = AdamState::new_like(&policy.params());
        let q1_opt = AdamState::new_like(&q1.params());
        let q2_opt = AdamState::new_like(&q2.params());
        Ok(Self {
            target_entropy: cfg.target_entropy.unwrap_or(-(action_dim as f64)),
            scaler: ActionScaler::new(action_low, action_high),
            log_temperature: cfg.initial_temperature.ln(),
            cfg,
            state_dim,
            action_dim,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            policy_opt,
            q1_opt,
            q2_opt,
            temp_opt_m: 0.0,
            temp_opt_v: 0.0,
            temp_opt_t: 0,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn validate_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(CoreError::Invalid(format!(
                "state dim {} does not match agent dim {}",
                state.len(),
                self.state_dim
            )));
        }
        if !state.iter().all(|x| x.is_finite()) {
            return Err(CoreError::Invalid("NaN/Inf in state".into()));
        }
        Ok(())
    }

    /// Bounded action for a state; stochastic mode samples the squashed
    /// Gaussian, deterministic mode squashes the mean.
    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut Pcg64) -> Result<Vec<f64>> {
        self.validate_state(state)?;
        let out = self.policy.forward_one(state)?;
        let (mean, raw_ls) = out.split_at(self.action_dim);
        if deterministic {
            Ok(policy::deterministic_action(mean, &self.scaler))
        } else {
            let noise = policy::noise_matrix(1, self.action_dim, rng);
            let (action, _) = policy::sample_with_log_prob(mean, raw_ls, noise.data(), &self.scaler);
            Ok(action)
        }
    }

    /// Pure function underlying the TD target:
    /// r + gamma (1 - done) (min_q_next - temperature * log_pi_next).
    pub fn critic_target_value(
        reward: f64,
        gamma: f64,
        done: bool,
        min_q_next: f64,
        temperature: f64,
        log_pi_next: f64,
    ) -> f64 {
        if done {
            reward
        } else {
            reward + gamma * (min_q_next - temperature * log_pi_next)
        }
    }

    /// TD target for a single transition, sampling a' from the current
    /// policy and bootstrapping through the min of the target critics.
    pub fn critic_target(
        &self,
        reward: f64,
        next_state: &[f64],
        done: bool,
        rng: &mut Pcg64,
    ) -> Result<f64> {
        self.validate_state(next_state)?;
        let out = self.policy.forward_one(next_state)?;
        let (mean, raw_ls) = out.split_at(self.action_dim);
        let noise = policy::noise_matrix(1, self.action_dim, rng);
        let (action, log_pi) =
            policy::sample_with_log_prob(mean, raw_ls, noise.data(), &self.scaler);
        let mut input = next_state.to_vec();
        input.extend_from_slice(&action);
        let q1 = self.q1_target.forward_one(&input)?[0];
        let q2 = self.q2_target.forward_one(&input)?[0];
        Ok(Self::critic_target_value(
            reward,
            self.cfg.gamma,
            done,
            q1.min(q2),
            self.temperature(),
            log_pi,
        ))
    }

    /// One SAC update: critic step, actor step, temperature step, soft
    /// target update.
    pub fn update(
        &mut self,
        buffer: &mut ReplayBuffer,
        batch_size: usize,
        real_ratio: f64,
        rng: &mut Pcg64,
    ) -> Result<UpdateMetrics> {
        if batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        let batch = buffer.sample(batch_size, real_ratio, rng)?;
        let n = batch.len();
        let model_fraction =
            batch.iter().filter(|t| t.source == Source::Model).count() as f64 / n as f64;

        let states = DenseArray::from_rows(
            &batch.iter().map(|t| t.state.clone()).collect::<Vec<_>>(),
        )?;
        let state_actions = DenseArray::from_rows(
            &batch
                .iter()
                .map(|t| {
                    let mut row = t.state.clone();
                    row.extend_from_slice(&t.action);
                    row
                })
                .collect::<Vec<_>>(),
        )?;

        // targets (model-sourced rewards are already penalized)
        let targets = self.batched_targets(&batch, rng)?;
        let target_arr = DenseArray::new(vec![n, 1], targets)?;

        let (critic_loss, mean_q) = self.critic_step(&state_actions, &target_arr)?;
        let (actor_loss, mean_log_pi) = self.actor_step(&states, rng)?;
        if self.cfg.learned_temperature {
            self.temperature_step(mean_log_pi)?;
        }
        self.q1_target.soft_update_from(&self.q1, self.cfg.tau)?;
        self.q2_target.soft_update_from(&self.q2, self.cfg.tau)?;

        let metrics = UpdateMetrics {
            critic_loss,
            actor_loss,
            entropy: -mean_log_pi,
            temperature: self.temperature(),
            mean_q,
            model_fraction,
        };
        if !(metrics.critic_loss.is_finite()
            && metrics.actor_loss.is_finite()
            && metrics.temperature.is_finite())
        {
            return Err(CoreError::Invalid("non-finite update metrics".into()));
        }
        Ok(metrics)
    }

    /// Batched TD targets; same math as [`SacAgent::critic_target`] but with
    /// one forward per network instead of one per sample.
    fn batched_targets(&self, batch: &[Transition], rng: &mut Pcg64) -> Result<Vec<f64>> {
        let n = batch.len();
        let next_states = DenseArray::from_rows(
            &batch.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>(),
        )?;
        let head = self.policy.forward(&next_states)?;
        let noise = policy::noise_matrix(n, self.action_dim, rng);

        let mut next_inputs = Vec::with_capacity(n);
        let mut log_pis = Vec::with_capacity(n);
        for i in 0..n {
            let row = head.row(i);
            let (mean, raw_ls) = row.split_at(self.action_dim);
            let (action, log_pi) =
                policy::sample_with_log_prob(mean, raw_ls, noise.row(i), &self.scaler);
            let mut input = batch[i].next_state.clone();
            input.extend_from_slice(&action);
            next_inputs.push(input);
            log_pis.push(log_pi);
        }
        let next_x = DenseArray::from_rows(&next_inputs)?;
        let q1 = self.q1_target.forward(&next_x)?;
        let q2 = self.q2_target.forward(&next_x)?;

        let temp = self.temperature();
        Ok((0..n)
            .map(|i| {
                Self::critic_target_value(
                    batch[i].reward,
                    self.cfg.gamma,
                    batch[i].done,
                    q1.data()[i].min(q2.data()[i]),
                    temp,
                    log_pis[i],
                )
            })
            .collect())
    }

    fn critic_step(&mut self, state_actions: &DenseArray, targets: &DenseArray) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let q1_vars = self.q1.vars(&mut tape);
        let q2_vars = self.q2.vars(&mut tape);
        let x = tape.leaf(state_actions.clone());
        let y = tape.leaf(targets.clone());

        let q1_out = self.q1.forward_tape(&mut tape, &q1_vars, x)?;
        let q2_out = self.q2.forward_tape(&mut tape, &q2_vars, x)?;
        let d1 = tape.sub(q1_out, y)?;
        let d2 = tape.sub(q2_out, y)?;
        let s1 = tape.square(d1)?;
        let s2 = tape.square(d2)?;
        let l1 = tape.mean_all(s1)?;
        let l2 = tape.mean_all(s2)?;
        let loss = tape.add(l1, l2)?;

        let loss_value = tape.value(loss).item()?;
        let mean_q = tape.value(q1_out).data().iter().sum::<f64>()
            / tape.value(q1_out).len() as f64;

        let mut grads = tape.backward(loss)?;
        let adam = AdamConfig::with_lr(self.cfg.critic_lr);
        for (mlp, vars, opt) in [
            (&mut self.q1, &q1_vars, &mut self.q1_opt),
            (&mut self.q2, &q2_vars, &mut self.q2_opt),
        ] {
            let grad_arrays: Vec<DenseArray> = vars
                .weights
                .iter()
                .zip(&vars.biases)
                .flat_map(|(w, b)| [*w, *b])
                .map(|v| grads.take_or_zeros(v, tape.value(v).shape()))
                .collect();
            let mut params = mlp.params_mut();
            opt.step(&adam, &mut params, &grad_arrays)?;
        }
        Ok((loss_value, mean_q))
    }

    fn actor_step(&mut self, states: &DenseArray, rng: &mut Pcg64) -> Result<(f64, f64)> {
        let n = states.dims2()?.0;
        let mut tape = Tape::new();
        let policy_vars = self.policy.vars(&mut tape);
        let q1_vars = self.q1.vars(&mut tape);
        let q2_vars = self.q2.vars(&mut tape);
        let sv = tape.leaf(states.clone());
        let noise = tape.leaf(policy::noise_matrix(n, self.action_dim, rng));

        let sample = policy::taped_sample(&mut tape, &self.policy, &policy_vars, sv, noise, &self.scaler)?;
        let x = tape.concat_cols(sv, sample.action)?;
        let q1_out = self.q1.forward_tape(&mut tape, &q1_vars, x)?;
        let q2_out = self.q2.forward_tape(&mut tape, &q2_vars, x)?;
        let q_min = tape.min_elem(q1_out, q2_out)?;

        let weighted_lp = tape.mul_scalar(sample.log_prob, self.temperature())?;
        let diff = tape.sub(weighted_lp, q_min)?;
        let loss = tape.mean_all(diff)?;

        let loss_value = tape.value(loss).item()?;
        let mean_log_pi = tape.value(sample.log_prob).data().iter().sum::<f64>() / n as f64;

        let mut grads = tape.backward(loss)?;
        let grad_arrays: Vec<DenseArray> = policy_vars
            .weights
            .iter()
            .zip(&policy_vars.biases)
            .flat_map(|(w, b)| [*w, *b])
            .map(|v| grads.take_or_zeros(v, tape.value(v).shape()))
            .collect();
        let mut params = self.policy.params_mut();
        self.policy_opt
            .step(&AdamConfig::with_lr(self.cfg.actor_lr), &mut params, &grad_arrays)?;
        Ok((loss_value, mean_log_pi))
    }

    /// Adam on the scalar log-temperature with closed-form gradient
    /// d/dlog_t of [-log_t * (mean_log_pi + target_entropy)].
    fn temperature_step(&mut self, mean_log_pi: f64) -> Result<()> {
        let grad = -(mean_log_pi + self.target_entropy);
        if !grad.is_finite() {
            return Err(CoreError::Invalid("non-finite temperature gradient".into()));
        }
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.temp_opt_t += 1;
        self.temp_opt_m = b1 * self.temp_opt_m + (1.0 - b1) * grad;
        self.temp_opt_v = b2 * self.temp_opt_v + (1.0 - b2) * grad * grad;
        let mhat = self.temp_opt_m / (1.0 - b1.powi(self.temp_opt_t as i32));
        let vhat = self.temp_opt_v / (1.0 - b2.powi(self.temp_opt_t as i32));
        self.log_temperature -= self.cfg.temperature_lr * mhat / (vhat.sqrt() + eps);
        Ok(())
    }

    /// Writes policy, critics, targets, and temperature.
    pub fn write_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) {
        for (name, mlp) in [
            ("policy", &self.policy),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ] {
            let names = mlp.param_names(&format!("{prefix}/{name}"));
            ck.insert_all(&names, mlp.params());
        }
        ck.insert(
            format!("{prefix}/log_temperature"),
            DenseArray::scalar(self.log_temperature).expect("finite"),
        );
    }

    /// Frozen copies of target-network parameters, for convergence tests.
    #[cfg(test)]
    fn target_params_flat(&self) -> Vec<f64> {
        self.q1_target
            .params()
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }
}

impl crate::rollout::RolloutPolicy for SacAgent {
    fn sample_action(&self, state: &[f64], rng: &mut Pcg64) -> Vec<f64> {
        self.act(state, false, rng)
            .expect("rollout states come from the model and stay finite")
    }
}
