//! Named RNG streams derived from one master seed.
//!
//! Every source of randomness in a run (environment resets, member inits,
//! rollout sampling, agent updates, ...) draws from its own stream so that
//! changing how often one consumer draws does not perturb the others.

use rand_pcg::Pcg64;
use rand::SeedableRng;

/// Stable FNV-1a; used instead of `DefaultHasher` so stream derivation never
/// changes across toolchain releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic sub-stream of `master` identified by a name.
pub fn stream(master: u64, name: &str) -> Pcg64 {
    Pcg64::seed_from_u64(master ^ fnv1a(name.as_bytes()))
}

/// Sub-stream additionally keyed by an index (epoch, member id, ...).
pub fn stream_indexed(master: u64, name: &str, index: u64) -> Pcg64 {
    let key = fnv1a(name.as_bytes()).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    Pcg64::seed_from_u64(master ^ key)
}
