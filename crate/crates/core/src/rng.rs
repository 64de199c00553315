//! Counter-based randomness.
//!
//! Every stochastic gradient draw is keyed by `(root_seed, round, client, step)`.
//! The ChaCha key is derived from `(root_seed, round)` and the stream id packs
//! `(client, step)` into 64 bits, so the draws of a given tuple never depend on
//! which thread evaluates it or on what was drawn before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identity of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub root_seed: u64,
    pub round: u64,
    pub client: u32,
    pub step: u32,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the stream for one `(seed, round, client, step)` tuple.
pub fn derive_stream(root_seed: u64, round: u64, client: u32, step: u32) -> RngStream {
    RngStream {
        root_seed,
        round,
        client,
        step,
    }
}

impl RngStream {
    /// 256-bit ChaCha key for `(root_seed, round)`.
    fn key(&self) -> [u8; 32] {
        // Absorb the round into a seed-dependent state, then expand.
        let mut state = self.root_seed;
        let a = splitmix64(&mut state);
        let mut state = a ^ self.round.wrapping_mul(0xd1b5_4a32_d192_ed03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(((self.client as u64) << 32) | self.step as u64);
        rng
    }
}

/// Generator for data synthesis and other one-off draws keyed by a single seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
