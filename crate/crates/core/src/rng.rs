//! Named, seeded random streams.
//!
//! Every random draw in the crate comes from a stream identified by a global
//! seed, a stream name and an index. Work items that run in parallel each get
//! their own stream, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a sub-seed for a named stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    splitmix(seed ^ splitmix(fnv1a(stream.as_bytes())))
}

/// Random generator for item `index` of the named stream.
pub fn stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name));
    rng.set_stream(index);
    rng
}

/// Standard normal vector of length `n`.
pub fn standard_normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Sample an index from a (not necessarily normalized) non-negative weight vector.
pub fn sample_categorical(rng: &mut Rng, probs: &[f64]) -> usize {
    use rand::Rng as _;
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    // rounding: fall back to the last index with positive mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}
