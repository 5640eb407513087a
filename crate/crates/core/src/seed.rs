//! Deterministic seed derivation for independent, reproducible RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep the sub-seeds of one replicate apart.
pub mod stream {
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const GENOTYPE: u64 = 0x47454e4f;
    pub const TRAIT: u64 = 0x5452_4149;
    pub const CAUSAL: u64 = 0x4341_5553;
    pub const KNOCKOFF: u64 = 0x4b4e_4f43;
    pub const NETWORK: u64 = 0x4e45_5457;
    pub const SEARCH: u64 = 0x5345_4152;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const BASELINE: u64 = 0x4241_5345;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of stream indices.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
