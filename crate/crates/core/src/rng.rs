//! Stream splitting. Every random draw in the crate comes from a stream
//! identified by `(master seed, module tag, replica index)`:
//!
//! * the seed and tag are hashed (FNV-1a on the tag, then a SplitMix64
//!   finalizer) into a 64-bit key that seeds a ChaCha8 generator;
//! * the replica index selects the ChaCha stream, so replicas never overlap
//!   and a replica's draws do not depend on which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(fnv1a(tag)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, for handing a sub-experiment its own master seed.
pub fn child_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(tag)).rotate_left(17))
}
