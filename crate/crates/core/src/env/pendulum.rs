//! Torque-limited pendulum swing-up.
//!
//! State (theta, theta_dot); observation (cos theta, sin theta, theta_dot);
//! torque u in [-2, 2]. Semi-implicit Euler with dt = 0.05:
//!
//!   theta_dot' = theta_dot + (-3 g / (2 l) * sin(theta + pi)
//!                + 3 / (m l^2) * u) * dt        (then clipped to max speed)
//!   theta'     = theta + theta_dot' * dt
//!
//! Reward is -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2); the upright
//! rest state under zero torque is the maximum at 0.

use rand::Rng;
use rand_pcg::Pcg64;

use super::{clip, validate_action, ContinuousEnv, StepOutcome};
use crate::error::Result;
use crate::rng;

const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const DT: f64 = 0.05;
const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const HORIZON: usize = 200;

// |r| < pi^2 + 0.1 * 8^2 + 0.001 * 2^2 ≈ 16.27
const R_MAX: f64 = 16.28;

pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    steps: usize,
    horizon: usize,
    rng: Pcg64,
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (theta + std::f64::consts::PI) % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a - std::f64::consts::PI
}

impl Pendulum {
    pub fn new(seed: u64) -> Self {
        Self {
            theta: std::f64::consts::PI,
            theta_dot: 0.0,
            steps: 0,
            horizon: HORIZON,
            rng: rng::stream(seed, "pendulum"),
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// One integrator step; free function form so tests can drive the exact
    /// declared ODE independently.
    pub fn dynamics(theta: f64, theta_dot: f64, torque: f64) -> (f64, f64) {
        let u = clip(torque, -MAX_TORQUE, MAX_TORQUE);
        let accel = -3.0 * GRAVITY / (2.0 * LENGTH) * (theta + std::f64::consts::PI).sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let new_dot = clip(theta_dot + accel * DT, -MAX_SPEED, MAX_SPEED);
        let new_theta = theta + new_dot * DT;
        (new_theta, new_dot)
    }

    pub fn reward_of(theta: f64, theta_dot: f64, torque: f64) -> f64 {
        let u = clip(torque, -MAX_TORQUE, MAX_TORQUE);
        -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u)
    }

    /// Internal state, for oracle tests.
    pub fn internal_state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_internal_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }
}

impl ContinuousEnv for Pendulum {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-MAX_TORQUE], vec![MAX_TORQUE])
    }

    fn r_max(&self) -> f64 {
        R_MAX
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = self.rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = self.rng.gen_range(-1.0..1.0);
        self.steps = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        validate_action(action, 1)?;
        let reward = Self::reward_of(self.theta, self.theta_dot, action[0]);
        let (t, td) = Self::dynamics(self.theta, self.theta_dot, action[0]);
        self.theta = t;
        self.theta_dot = td;
        self.steps += 1;
        Ok(StepOutcome {
            obs: self.obs(),
            reward,
            done: false,
            truncated: self.steps >= self.horizon,
        })
    }

    fn reward_fn(&self, obs: &[f64], action: &[f64]) -> Option<f64> {
        if obs.len() != 3 || action.is_empty() {
            return None;
        }
        let theta = obs[1].atan2(obs[0]);
        Some(Self::reward_of(theta, obs[2], action[0]))
    }
}
