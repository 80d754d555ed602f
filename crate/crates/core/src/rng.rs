//! Seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! which is counter based: a draw is fully determined by `(seed, stream, word position)`.
//! Two conversions are used throughout and are part of the reproducibility contract:
//!
//! * `unit(rng)`: `(next_u64 >> 11) * 2^-53`, a uniform double in `[0, 1)`.
//! * `below(rng, n)`: `(next_u64 as u128 * n as u128) >> 64`, a uniform index in `[0, n)`.
//!
//! Token sampling keys each draw by its absolute position in the context, so a sample
//! continued across several calls consumes exactly the same draws as one long call.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use rand_chacha::ChaCha8Rng as Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a label.
pub fn derive(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// FNV-1a over bytes; used to key per-document streams by id.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator positioned at `(seed, stream, position)`; each position owns one 64-bit word pair.
pub fn at(seed: u64, stream: u64, position: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * position as u128);
    rng
}

pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "below(0)");
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Draws `count` distinct indices from `0..n` by a partial Fisher-Yates shuffle:
/// for `i` in `0..count`, swap position `i` with `i + below(n - i)`.
pub fn choose_distinct(rng: &mut impl RngCore, n: usize, count: usize) -> Vec<usize> {
    assert!(count <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + below(rng, n - i);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}

pub fn uniform_in(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}
