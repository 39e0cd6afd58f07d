//! Deterministic noise derivation for stochastic passes.
//!
//! Every random decision made during a stochastic forward pass (collapse
//! flags, sampling noise, dropout indicators) is drawn from a generator
//! keyed by `(master seed, pass index, node, purpose)`. Results therefore do
//! not depend on execution order, and concurrent passes over the same graph
//! cannot interfere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix_step(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one well-mixed seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C908; // fractional bits of sqrt(2)
    for &p in parts {
        h = splitmix_step(h ^ p);
    }
    h
}

/// A compact generator derived from a seed sequence; the seeding used for
/// every internal random draw, exposed so callers can build reproducible
/// generators for sampling utilities.
pub fn derive_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

/// What a per-node draw is used for; keeps the streams independent.
#[derive(Clone, Copy, Debug)]
pub(crate) enum NoiseKind {
    /// PCFF collapse/sample decision.
    Collapse,
    /// Sampling noise for the node value itself.
    Value,
    /// Dropout indicator.
    Dropout,
}

/// Noise source for one stochastic forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PassNoise {
    master_seed: u64,
    pass_index: u64,
}

impl PassNoise {
    pub fn new(master_seed: u64, pass_index: u64) -> Self {
        Self {
            master_seed,
            pass_index,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn pass_index(&self) -> u64 {
        self.pass_index
    }

    /// Generator for one node's draw of the given kind.
    pub(crate) fn node_rng(&self, kind: NoiseKind, layer: usize, node: usize) -> ChaCha8Rng {
        derive_rng(&[
            self.master_seed,
            self.pass_index,
            kind as u64,
            layer as u64,
            node as u64,
        ])
    }
}
