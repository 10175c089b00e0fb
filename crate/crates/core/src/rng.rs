//! Deterministic random streams.
//!
//! Every episode, trial and critic fit draws from its own ChaCha stream keyed
//! by the master seed and a tag path, so results do not depend on execution
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_TRAIN: u64 = 1;
pub const TAG_TEST: u64 = 2;
pub const TAG_CRITIC: u64 = 3;
pub const TAG_TRIAL: u64 = 4;
pub const TAG_SIM: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |h, &t| splitmix64(h ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
