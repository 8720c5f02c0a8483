//! Deterministic RNG substreams.
//!
//! Every stochastic routine in this crate derives its randomness from a
//! `(seed, tag, index)` triple, so per-sample streams are independent and the
//! result of a parallel computation does not depend on scheduling or worker
//! count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the substreams of different pipeline stages disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    /// Per-sample noise streams of `VarModel::simulate`.
    Simulate,
    /// First simulated replicate batch.
    Replica1,
    /// Second, independent replicate batch.
    Replica2,
    /// Bootstrap resampling.
    Bootstrap,
    /// Anything test- or scenario-local.
    Aux(u64),
}

impl StreamTag {
    fn id(self) -> u64 {
        match self {
            StreamTag::Simulate => 0,
            StreamTag::Replica1 => 1,
            StreamTag::Replica2 => 2,
            StreamTag::Bootstrap => 3,
            StreamTag::Aux(k) => 0x1000 + k,
        }
    }
}

/// Derive a child seed, e.g. for the two replicate batches of a
/// pick-and-freeze pair.
pub fn derive_seed(seed: u64, tag: StreamTag) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.id())
}

/// SplitMix64 step; decorrelates nearby (seed, tag, index) triples.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for one substream of `seed`.
pub fn substream(seed: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix64(seed);
    let b = splitmix64(a ^ tag.id());
    let c = splitmix64(b ^ index);
    let d = splitmix64(c);
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
