//! Deterministic RNG substreams.
//!
//! Every random draw in the crate flows from a master seed through
//! [`substream`], which derives an independent ChaCha stream from the seed
//! plus a tag path (e.g. `[BAG, bag_index]`). Work parallelised across bags
//! or bootstrap iterations therefore produces identical output regardless
//! of scheduling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Tag constants naming the independent randomness consumers.
pub mod tags {
    /// Per-bag volume generation.
    pub const BAG: u64 = 0x01;
    /// Per-bag artifact injection (group placement + pixel draws).
    pub const ARTIFACT: u64 = 0x02;
    /// Choice of which bags in a dataset receive artifacts.
    pub const SELECT: u64 = 0x03;
    /// Bootstrap resampling iterations.
    pub const BOOTSTRAP: u64 = 0x04;
    /// Train/val/test split sub-seeds.
    pub const SPLIT: u64 = 0x05;
    /// Oracle member prototype jitter.
    pub const ORACLE_MEMBER: u64 = 0x06;
    /// Oracle out-of-distribution ("haywire") logit draws.
    pub const ORACLE_HAYWIRE: u64 = 0x07;
    /// Oracle reference renders used to fit prototypes.
    pub const ORACLE_REF: u64 = 0x08;
    /// Derivation of the oracle seed from a master seed.
    pub const ORACLE: u64 = 0x09;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a cheap avalanche permutation of 64-bit state.
fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a tag path into a single well-scrambled 64-bit
/// value. Different paths give unrelated values; the same path is stable.
pub fn mix(seed: u64, tag_path: &[u64]) -> u64 {
    let mut x = avalanche(seed ^ GOLDEN);
    for &tag in tag_path {
        x = avalanche(x.wrapping_add(GOLDEN) ^ avalanche(tag));
    }
    x
}

/// Independent RNG for the given tag path under a master seed.
pub fn substream(seed: u64, tag_path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, tag_path))
}

/// One draw from N(mean, std) via Box-Muller. Consumes exactly two uniform
/// draws per call so the stream layout is easy to reason about.
pub fn sample_normal<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    // 1 - u maps [0,1) to (0,1], keeping the log argument positive.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let radius = (-2.0 * u1.ln()).sqrt();
    mean + std * radius * (std::f64::consts::TAU * u2).cos()
}

/// FNV-1a over raw bytes; used to key content-addressed substreams
/// (stable, unlike the std hasher, across releases and processes).
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
