//! Counter-based RNG substreams.
//!
//! Every random draw in a run is addressed by `(seed, kind, step, prompt, slot)`.
//! A substream depends only on its address, so rollouts can be generated in any
//! order or in parallel and still reproduce the sequential schedule bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a substream; separates action sampling from reward noise so the
/// noise-free quality channel never perturbs the sampling sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Sampling = 1,
    RewardNoise = 2,
    Reference = 3,
    Init = 4,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one well-mixed 64-bit value.
pub fn mix_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| mix64(acc ^ mix64(w)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, kind: StreamKind, step: u64, prompt: u64, slot: u64) -> ChaCha8Rng {
        let key = mix_words(&[self.seed, kind as u64, step, prompt, slot]);
        ChaCha8Rng::seed_from_u64(key)
    }
}
