//! Deterministic seed derivation.
//!
//! Every random stream in an experiment is keyed by the experiment seed plus
//! a purpose tag and indices (round, client id), so scheduling order never
//! changes which numbers a consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_PARTITION: u64 = 0x7061_7274;
pub const TAG_INIT: u64 = 0x696e_6974;
pub const TAG_SAMPLE: u64 = 0x7361_6d70;
pub const TAG_SHUFFLE: u64 = 0x7368_7566;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}
