//! Seeded randomness with a documented, reproducible draw procedure.
//!
//! Every consumer gets a ChaCha8 generator seeded with the run seed, on a
//! stream selected by the 64-bit FNV-1a hash of a stable name (class label,
//! instance id, ...). Integer draws in `[0, n)` use the multiply-shift map
//! `(next_u64 · n) >> 64`, so a reimplementation needs nothing beyond the
//! raw ChaCha8 output.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(stream.as_bytes()));
    rng
}

/// Uniform-ish index in `[0, n)`; `n` must be positive.
pub fn bounded(rng: &mut impl RngCore, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Moves a uniformly drawn `k`-subset to the front of `items` (partial
/// Fisher-Yates) and returns it in draw order.
pub fn partial_shuffle<T>(rng: &mut impl RngCore, items: &mut [T], k: usize) {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = i + bounded(rng, n - i);
        items.swap(i, j);
    }
}
