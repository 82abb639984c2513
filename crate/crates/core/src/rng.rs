//! Seed derivation. Every random stream in the crate is keyed by a base seed
//! plus a path of integers (scene index, step, camera, ...), so results never
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x5851_F42D))))
}

pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

// Stream tags keep unrelated consumers of the same seed apart.
pub(crate) mod tag {
    pub const SCENE: u64 = 1;
    pub const DOMAIN: u64 = 2;
    pub const PROPOSAL_2D: u64 = 3;
    pub const PROPOSAL_3D: u64 = 4;
    pub const FALSE_POS_2D: u64 = 5;
    pub const FALSE_POS_3D: u64 = 6;
    pub const IMAGE_DEPTH: u64 = 7;
    pub const MASK: u64 = 8;
    pub const INIT: u64 = 9;
    pub const SHUFFLE: u64 = 10;
    pub const TOKENS: u64 = 11;
}
