//! 1-D point-mass reacher: push a unit mass to the origin with a bounded
//! force under light damping. State (x, v), force in [-1, 1], dt = 0.05.

use rand::Rng;
use rand_pcg::Pcg64;

use super::{clip, validate_action, ContinuousEnv, StepOutcome};
use crate::error::Result;
use crate::rng;

const DT: f64 = 0.05;
const DAMPING: f64 = 0.25;
const MAX_FORCE: f64 = 1.0;
const MAX_POS: f64 = 2.0;
const MAX_VEL: f64 = 4.0;
const HORIZON: usize = 200;

// |r| < 2^2 + 0.1 * 4^2 + 0.001 ≈ 5.6
const R_MAX: f64 = 5.7;

pub struct PointReacher {
    x: f64,
    v: f64,
    steps: usize,
    horizon: usize,
    rng: Pcg64,
}

impl PointReacher {
    pub fn new(seed: u64) -> Self {
        Self {
            x: 1.0,
            v: 0.0,
            steps: 0,
            horizon: HORIZON,
            rng: rng::stream(seed, "reacher1d"),
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn reward_of(x: f64, v: f64, force: f64) -> f64 {
        let u = clip(force, -MAX_FORCE, MAX_FORCE);
        -(x * x + 0.1 * v * v + 0.001 * u * u)
    }
}

impl ContinuousEnv for PointReacher {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-MAX_FORCE], vec![MAX_FORCE])
    }

    fn r_max(&self) -> f64 {
        R_MAX
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        self.x = self.rng.gen_range(-1.5..1.5);
        self.v = self.rng.gen_range(-0.5..0.5);
        self.steps = 0;
        vec![self.x, self.v]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        validate_action(action, 1)?;
        let u = clip(action[0], -MAX_FORCE, MAX_FORCE);
        let reward = Self::reward_of(self.x, self.v, u);
        self.v = clip(self.v + (u - DAMPING * self.v) * DT, -MAX_VEL, MAX_VEL);
        self.x = clip(self.x + self.v * DT, -MAX_POS, MAX_POS);
        self.steps += 1;
        Ok(StepOutcome {
            obs: vec![self.x, self.v],
            reward,
            done: false,
            truncated: self.steps >= self.horizon,
        })
    }

    fn reward_fn(&self, obs: &[f64], action: &[f64]) -> Option<f64> {
        if obs.len() != 2 || action.is_empty() {
            return None;
        }
        Some(Self::reward_of(obs[0], obs[1], action[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_origin_with_zero_force_reward_is_zero() {
        let mut env = PointReacher::new(0);
        env.reset();
        env.x = 0.0;
        env.v = 0.0;
        let out = env.step(&[0.0]).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.obs, vec![0.0, 0.0]);
    }

    #[test]
    fn deterministic_under_equal_seeds() {
        let mut a = PointReacher::new(77);
        let mut b = PointReacher::new(77);
        assert_eq!(a.reset(), b.reset());
        for i in 0..30 {
            let act = [((i * 13) as f64 * 0.05).sin()];
            assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
        }
    }

    #[test]
    fn observations_stay_finite_and_bounded() {
        let mut env = PointReacher::new(4);
        env.reset();
        for _ in 0..500 {
            let out = env.step(&[1.0]).unwrap();
            assert!(out.obs.iter().all(|x| x.is_finite()));
            assert!(out.obs[0].abs() <= MAX_POS && out.obs[1].abs() <= MAX_VEL);
            assert!(out.reward.abs() < env.r_max());
            if out.truncated {
                env.reset();
            }
        }
    }
}
