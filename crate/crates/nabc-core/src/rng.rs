//! Deterministic, order-independent random streams.
//!
//! Every replicate of a Monte Carlo run gets its own counter-based
//! substream, so parallel execution order never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// An independent stream for (seed, index). The base seed selects the key,
/// the index selects the ChaCha stream, so substreams never overlap.
pub fn substream_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Well-mixed derived seed for nested Monte Carlo structure (e.g. replicate
/// r, retry attempt a). SplitMix64 finalization on the combined words.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ mix64(a ^ mix64(b));
    z = mix64(z);
    z
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
