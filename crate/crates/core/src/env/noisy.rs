//! Action-noise wrapper: the executed action is a' = clip(a + eps) with
//! eps ~ Normal(0, sigma^2 I) drawn from a dedicated stream the agent never
//! observes. Observations and rewards pass through unchanged.

use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;

use super::{clip, ContinuousEnv, StepOutcome};
use crate::error::{CoreError, Result};
use crate::rng;

pub struct NoisyActionWrapper<E: ?Sized + ContinuousEnv> {
    sigma: f64,
    rng: Pcg64,
    inner: Box<E>,
}

impl<E: ?Sized + ContinuousEnv> NoisyActionWrapper<E> {
    pub fn new(inner: Box<E>, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(CoreError::Invalid(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            rng: rng::stream(seed, "action-noise"),
            inner,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Perturbs and clips one action in place; exposed for tests.
    pub fn perturb(action: &[f64], sigma: f64, bounds: (&[f64], &[f64]), rng: &mut Pcg64) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        action
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let eps = normal.sample(rng) * sigma;
                clip(a + eps, bounds.0[i], bounds.1[i])
            })
            .collect()
    }
}

impl<E: ?Sized + ContinuousEnv> ContinuousEnv for NoisyActionWrapper<E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.inner.action_bounds()
    }

    fn r_max(&self) -> f64 {
        self.inner.r_max()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        super::validate_action(action, self.inner.action_dim())?;
        if self.sigma == 0.0 {
            return self.inner.step(action);
        }
        let (lo, hi) = self.inner.action_bounds();
        let executed = Self::perturb(action, self.sigma, (&lo, &hi), &mut self.rng);
        self.inner.step(&executed)
    }

    fn reward_fn(&self, obs: &[f64], action: &[f64]) -> Option<f64> {
        self.inner.reward_fn(obs, action)
    }
}
