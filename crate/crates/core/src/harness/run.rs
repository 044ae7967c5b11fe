//! The outer training loop.
//!
//! Per epoch: collect real steps with the current policy, retrain the
//! ensemble with early stopping, regenerate the model buffer in chunks
//! interleaved with policy updates, evaluate deterministically, emit one
//! metrics record. A master seed fans out into named streams (env, eval,
//! exploration, model training, rollouts, updates) so every metric is a
//! deterministic function of (config, seed).

use std::fs;
use std::io::Write as IoWrite;
use std::path::Path;

use rand::Rng;

use m2ac_nn::Checkpoint;

use super::{Algorithm, ExperimentConfig, MetricsRecord};
use crate::env::{build_env, build_env_with_horizon, ContinuousEnv};
use crate::error::{CoreError, Result};
use crate::model::{train_ensemble, EnsembleModel};
use crate::rng;
use crate::rollout;
use crate::sac::{ReplayBuffer, SacAgent};
use crate::types::Transition;

pub struct RunResult {
    pub metrics: Vec<MetricsRecord>,
    pub config: ExperimentConfig,
}

impl RunResult {
    pub fn final_return(&self) -> f64 {
        self.metrics.last().map(|m| m.eval_return_mean).unwrap_or(f64::NAN)
    }
}

/// Mean/std of evaluation returns under the deterministic policy.
pub fn evaluate_policy(
    agent: &SacAgent,
    cfg: &ExperimentConfig,
    epoch: usize,
) -> Result<(f64, f64)> {
    let mut env = build_env_with_horizon(
        &cfg.env_id,
        cfg.noise,
        rng::stream_indexed(cfg.seed, "eval-env", epoch as u64).gen(),
        cfg.episode_horizon,
    )?;
    let mut rng = rng::stream_indexed(cfg.seed, "eval-act", epoch as u64);
    let mut returns = Vec::with_capacity(cfg.eval_episodes);
    for _ in 0..cfg.eval_episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        loop {
            let action = agent.act(&obs, true, &mut rng)?;
            let out = env.step(&action)?;
            total += out.reward;
            obs = out.obs;
            if out.done || out.truncated {
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / returns.len() as f64;
    Ok((mean, var.sqrt()))
}

struct Collector {
    env: Box<dyn ContinuousEnv>,
    obs: Vec<f64>,
    total_steps: usize,
}

impl Collector {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut env = build_env_with_horizon(&cfg.env_id, cfg.noise, cfg.seed, cfg.episode_horizon)?;
        let obs = env.reset();
        Ok(Self {
            env,
            obs,
            total_steps: 0,
        })
    }

    /// Collects `n` environment steps, pushing real transitions into the
    /// buffer. Uses uniform-random actions until `start_steps` is reached.
    fn collect(
        &mut self,
        n: usize,
        cfg: &ExperimentConfig,
        agent: &SacAgent,
        buffer: &mut ReplayBuffer,
        explore_rng: &mut rand_pcg::Pcg64,
        dump: &mut Option<fs::File>,
    ) -> Result<()> {
        let (lo, hi) = self.env.action_bounds();
        for _ in 0..n {
            let action = if self.total_steps < cfg.start_steps {
                lo.iter()
                    .zip(&hi)
                    .map(|(l, h)| explore_rng.gen_range(*l..*h))
                    .collect()
            } else {
                agent.act(&self.obs, false, explore_rng)?
            };
            let out = self.env.step(&action)?;
            let t = Transition::real(
                std::mem::take(&mut self.obs),
                action,
                out.reward,
                out.obs.clone(),
                out.done,
            );
            if let Some(f) = dump {
                writeln!(f, "{}", serde_json::to_string(&t)?)
                    .map_err(|e| CoreError::Io(e.to_string()))?;
            }
            buffer.push(t);
            self.obs = if out.done || out.truncated {
                self.env.reset()
            } else {
                out.obs
            };
            self.total_steps += 1;
        }
        Ok(())
    }
}

fn write_metrics_line(file: &mut Option<fs::File>, record: &MetricsRecord) -> Result<()> {
    if let Some(f) = file {
        writeln!(f, "{}", serde_json::to_string(record)?)
            .map_err(|e| CoreError::Io(e.to_string()))?;
    }
    Ok(())
}

fn dump_checkpoint(
    dir: &Path,
    name: &str,
    agent: &SacAgent,
    ensemble: Option<&EnsembleModel>,
) -> Result<()> {
    let mut ck = Checkpoint::new();
    agent.write_checkpoint(&mut ck, "agent");
    if let Some(ens) = ensemble {
        ens.write_checkpoint(&mut ck, "model");
    }
    ck.save(&dir.join(name))?;
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let probe = build_env(&cfg.env_id, cfg.noise, cfg.seed)?;
    let state_dim = probe.state_dim();
    let action_dim = probe.action_dim();
    let (lo, hi) = probe.action_bounds();
    let reward_fn_available = probe.reward_fn(&probe_obs(state_dim), &vec![0.0; action_dim]).is_some();
    drop(probe);

    let mut agent = SacAgent::new(
        state_dim,
        action_dim,
        &lo,
        &hi,
        cfg.sac.clone(),
        rng::stream(cfg.seed, "agent").gen(),
    )?;
    let mut ensemble = match cfg.algorithm {
        Algorithm::M2ac => Some(EnsembleModel::new(
            state_dim,
            action_dim,
            cfg.model.clone(),
            rng::stream(cfg.seed, "model-init").gen(),
        )?),
        Algorithm::SacOnly => None,
    };
    let mut buffer = ReplayBuffer::new(cfg.real_capacity, cfg.model_capacity);
    let mut collector = Collector::new(cfg)?;
    let mut explore_rng = rng::stream(cfg.seed, "explore");
    let mut rollout_rng = rng::stream(cfg.seed, "rollout");
    let mut update_rng = rng::stream(cfg.seed, "update");

    let (mut metrics_file, mut traj_file) = match &cfg.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut mf = fs::File::create(dir.join("metrics.jsonl"))?;
            let meta = serde_json::json!({
                "config_digest": format!("{:016x}", cfg.digest()?),
                "seed": cfg.seed,
                "config": cfg,
            });
            writeln!(mf, "{meta}").map_err(|e| CoreError::Io(e.to_string()))?;
            let tf = if cfg.dump_trajectories {
                Some(fs::File::create(dir.join("trajectories.jsonl"))?)
            } else {
                None
            };
            (Some(mf), tf)
        }
        None => (None, None),
    };

    let mut metrics = Vec::with_capacity(cfg.epochs + 1);
    let (ev_mean, ev_std) = evaluate_policy(&agent, cfg, 0)?;
    let initial = MetricsRecord {
        epoch: 0,
        env_steps: 0,
        eval_return_mean: ev_mean,
        eval_return_std: ev_std,
        model_holdout_nll: None,
        model_stopping_epoch: None,
        kept_fraction: None,
        mean_uncertainty: None,
        critic_loss: 0.0,
        actor_loss: 0.0,
        entropy: 0.0,
        temperature: agent.temperature(),
        mean_q: 0.0,
        model_fraction: 0.0,
    };
    write_metrics_line(&mut metrics_file, &initial)?;
    metrics.push(initial);

    for epoch in 1..=cfg.epochs {
        collector.collect(
            cfg.env_steps_per_epoch,
            cfg,
            &agent,
            &mut buffer,
            &mut explore_rng,
            &mut traj_file,
        )?;

        let mut model_holdout_nll = None;
        let mut model_stopping_epoch = None;
        let mut kept = 0usize;
        let mut generated = 0usize;
        let mut kept_u_sum = 0.0;
        let mut update_sums = UpdateSums::default();

        if let Some(ens) = ensemble.as_mut() {
            let real_data: Vec<Transition> = buffer.real_iter().cloned().collect();
            let report = train_ensemble(
                ens,
                &real_data,
                &cfg.model_train,
                rng::stream_indexed(cfg.seed, "model-train", epoch as u64).gen(),
            )?;
            model_holdout_nll = Some(report.final_holdout_nll());
            model_stopping_epoch = Some(report.stopping_epoch);

            buffer.clear_model();
            let reward_fn = if cfg.use_true_reward && reward_fn_available {
                Some(make_reward_fn(&cfg.env_id, cfg.noise, cfg.seed)?)
            } else {
                None
            };

            let chunks = cfg.rollout_chunks;
            let base_updates = cfg.policy_updates_per_epoch / chunks;
            let remainder = cfg.policy_updates_per_epoch % chunks;
            for chunk in 0..chunks {
                // B initial states sampled from real experience with replacement
                let starts: Vec<Vec<f64>> = (0..cfg.rollout_batch)
                    .map(|_| {
                        let i = rollout_rng.gen_range(0..buffer.real_len());
                        buffer.real_get(i).state.clone()
                    })
                    .collect();
                let batch = rollout::generate(
                    ens,
                    &agent,
                    &starts,
                    &cfg.rollout,
                    &mut rollout_rng,
                    reward_fn
                        .as_ref()
                        .map(|f| &**f as &dyn Fn(&[f64], &[f64]) -> f64),
                )?;
                kept += batch.kept_total();
                generated += batch.generated_total();
                kept_u_sum += batch.mean_kept_uncertainty() * batch.kept_total() as f64;
                buffer.extend(batch.transitions);

                let updates = base_updates + if chunk < remainder { 1 } else { 0 };
                for _ in 0..updates {
                    match agent.update(&mut buffer, cfg.sac_batch, cfg.real_ratio, &mut update_rng)
                    {
                        Ok(m) => update_sums.add(&m),
                        Err(e) => {
                            if let Some(dir) = &cfg.out_dir {
                                dump_checkpoint(dir, "crash_checkpoint.json", &agent, ensemble.as_ref())?;
                            }
                            return Err(e);
                        }
                    }
                }
            }
        } else {
            for _ in 0..cfg.policy_updates_per_epoch {
                match agent.update(&mut buffer, cfg.sac_batch, 1.0, &mut update_rng) {
                    Ok(m) => update_sums.add(&m),
                    Err(e) => {
                        if let Some(dir) = &cfg.out_dir {
                            dump_checkpoint(dir, "crash_checkpoint.json", &agent, None)?;
                        }
                        return Err(e);
                    }
                }
            }
        }

        let (ev_mean, ev_std) = evaluate_policy(&agent, cfg, epoch)?;
        let record = MetricsRecord {
            epoch,
            env_steps: collector.total_steps,
            eval_return_mean: ev_mean,
            eval_return_std: ev_std,
            model_holdout_nll,
            model_stopping_epoch,
            kept_fraction: (generated > 0).then(|| kept as f64 / generated as f64),
            mean_uncertainty: (kept > 0).then(|| kept_u_sum / kept as f64),
            critic_loss: update_sums.mean_critic(),
            actor_loss: update_sums.mean_actor(),
            entropy: update_sums.mean_entropy(),
            temperature: agent.temperature(),
            mean_q: update_sums.mean_q(),
            model_fraction: update_sums.mean_model_fraction(),
        };
        if cfg.log_interval > 0 && epoch % cfg.log_interval == 0 {
            eprintln!(
                "epoch {epoch:4} steps {:6} eval {:9.1} kept {:?}",
                record.env_steps, record.eval_return_mean, record.kept_fraction
            );
        }
        write_metrics_line(&mut metrics_file, &record)?;
        metrics.push(record);
    }

    if let Some(dir) = &cfg.out_dir {
        dump_checkpoint(dir, "checkpoint.json", &agent, ensemble.as_ref())?;
        // final per-run CSV alongside the JSONL stream
        let mut csv = String::from("epoch,env_steps,eval_return_mean,eval_return_std\n");
        for m in &metrics {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                m.epoch, m.env_steps, m.eval_return_mean, m.eval_return_std
            ));
        }
        fs::write(dir.join("metrics.csv"), csv)?;
    }
    Ok(RunResult {
        metrics,
        config: cfg.clone(),
    })
}

fn probe_obs(state_dim: usize) -> Vec<f64> {
    vec![0.0; state_dim]
}

/// Boxed copy of the environment's reward function for rollout overrides.
fn make_reward_fn(
    env_id: &str,
    noise: crate::env::NoisePreset,
    seed: u64,
) -> Result<Box<dyn Fn(&[f64], &[f64]) -> f64>> {
    let env = build_env(env_id, noise, seed)?;
    Ok(Box::new(move |s: &[f64], a: &[f64]| {
        env.reward_fn(s, a).unwrap_or(0.0)
    }))
}

#[derive(Default)]
struct UpdateSums {
    n: usize,
    critic: f64,
    actor: f64,
    entropy: f64,
    q: f64,
    model_fraction: f64,
}

impl UpdateSums {
    fn add(&mut self, m: &crate::sac::UpdateMetrics) {
        self.n += 1;
        self.critic += m.critic_loss;
        self.actor += m.actor_loss;
        self.entropy += m.entropy;
        self.q += m.mean_q;
        self.model_fraction += m.model_fraction;
    }

    fn mean(&self, x: f64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            x / self.n as f64
        }
    }

    fn mean_critic(&self) -> f64 {
        self.mean(self.critic)
    }

    fn mean_actor(&self) -> f64 {
        self.mean(self.actor)
    }

    fn mean_entropy(&self) -> f64 {
        self.mean(self.entropy)
    }

    fn mean_q(&self) -> f64 {
        self.mean(self.q)
    }

    fn mean_model_fraction(&self) -> f64 {
        self.mean(self.model_fraction)
    }
}
