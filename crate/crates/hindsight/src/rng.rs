//! Deterministic, named random-number streams.
//!
//! Every stochastic component of a run (network init, exploration, environment
//! resets, relabeling, replay sampling, evaluation) draws from its own stream
//! derived from the run seed and a stream name. Streams are independent, so
//! changing how many draws one component makes never perturbs another, and an
//! identical `(seed, config)` pair replays an identical run bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn derive(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    let mut h = fnv1a(name.as_bytes(), FNV_OFFSET);
    h = fnv1a(&index.to_le_bytes(), h);
    let mut state = seed ^ h;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// The stream uniquely determined by `(seed, name)`.
///
/// Equivalent to [`substream`] with index 0.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    derive(seed, name, 0)
}

/// An indexed family of streams, e.g. one evaluation stream per epoch.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    derive(seed, name, index)
}
