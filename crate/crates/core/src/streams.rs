//! Counter-keyed random streams.
//!
//! Every random draw in a simulation comes from a generator keyed by a tuple
//! such as `(seed, trial, machine, step)`, so results never depend on the
//! order in which independent pieces of work are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
pub mod tag {
    pub const LOCAL_NOISE: u64 = 0x10;
    pub const MINIBATCH_NOISE: u64 = 0x11;
    pub const SERIAL_NOISE: u64 = 0x12;
    pub const SERVER_BATCH: u64 = 0x20;
    pub const CLIENT_SELECT: u64 = 0x21;
    pub const CLIENT_BATCH: u64 = 0x22;
    pub const OUTPUT_SELECT: u64 = 0x23;
    pub const ADVERSARY: u64 = 0x30;
    pub const DIRECTION: u64 = 0x31;
    pub const INSTANCE: u64 = 0x40;
    pub const TRIAL: u64 = 0x41;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a key path.
pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for &k in key {
        state ^= k.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        acc ^= splitmix64(&mut state).rotate_left(17);
    }
    acc ^ splitmix64(&mut state)
}

/// A generator for the stream identified by `(seed, key…)`.
pub fn stream(seed: u64, key: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, key);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    StreamRng::from_seed(bytes)
}
