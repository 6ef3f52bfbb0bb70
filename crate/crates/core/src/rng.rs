//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8, a counter-based
//! generator, keyed by a 64-bit seed and a 64-bit stream id. Two streams with
//! the same seed never overlap, so independent consumers (weight init,
//! batches, reparameterization noise, ...) can each own a stream and stay
//! reproducible regardless of call order elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const DISCRIMINATOR: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const EVAL: u64 = 6;
}

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derives a child seed from a parent seed and a label. Used to give each
/// study cell or metric its own seed without coordinating counters.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}
