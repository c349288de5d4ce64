//! Seed derivation, so every (stream, index) pair gets an independent RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(parent), |acc, t| splitmix(acc ^ splitmix(*t)))
}

pub fn rng(parent: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, tags))
}
