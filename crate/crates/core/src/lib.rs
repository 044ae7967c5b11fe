//! Masked model-based actor-critic on toy continuous-control tasks, plus an
//! exact verification lab for the algorithm's finite-MDP performance bounds.
//!
//! Module map:
//! - [`env`] — pendulum / 1-D reacher tasks, the action-noise wrapper, and
//!   exact finite MDPs;
//! - [`model`] — probabilistic ensemble dynamics model with One-vs-Rest
//!   uncertainty estimation;
//! - [`rollout`] — rank-masked model rollouts with reward penalization;
//! - [`sac`] — soft actor-critic on the mixed real/model replay buffer;
//! - [`bounds`] — exact finite-MDP verification of the return/Q bounds;
//! - [`harness`] — configuration, the training loop, metrics, and sweeps.

pub mod bounds;
pub mod env;
pub mod error;
pub mod harness;
mod linalg;
pub mod model;
pub mod rng;
pub mod rollout;
pub mod sac;
pub mod types;

pub use error::{CoreError, Result};
pub use types::{Source, Transition};
