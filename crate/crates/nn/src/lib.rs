//! Minimal numeric substrate: dense f64 arrays, a reverse-mode gradient
//! tape, MLPs, Adam, and a named-parameter checkpoint format.
//!
//! Pure value semantics throughout; there is no interior mutability, so
//! sharing across workers is safe as long as each network is mutated by at
//! most one of them.

pub mod adam;
pub mod array;
pub mod checkpoint;
pub mod error;
pub mod mlp;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::{matmul, DenseArray};
pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use mlp::{Activation, Mlp, MlpVars};
pub use tape::{Gradients, Tape, Var};
