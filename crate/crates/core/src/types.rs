//! Transition records shared by rollout generation, the replay buffer, and
//! trajectory dumps.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Model,
}

/// One (s, a, r, s', done) tuple tagged with its origin.
///
/// Real transitions carry `uncertainty = 0` and an unpenalized reward; model
/// transitions store the uncertainty score used for ranking and a reward
/// already penalized by `alpha * uncertainty`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub source: Source,
    pub uncertainty: f64,
    pub rollout_step: u32,
}

impl Transition {
    pub fn real(
        state: Vec<f64>,
        action: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        done: bool,
    ) -> Self {
        Self {
            state,
            action,
            reward,
            next_state,
            done,
            source: Source::Real,
            uncertainty: 0.0,
            rollout_step: 0,
        }
    }
}
