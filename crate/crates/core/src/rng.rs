//! Seeded randomness. Every generator and trainer draws from ChaCha8 seeded
//! through [`seeded`], so files and checkpoints reproduce across runs and
//! platforms for a fixed dependency lockfile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Identifies the generator algorithm in sidecar metadata.
pub const RNG_NAME: &str = "chacha8-v1";

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent seed for a named sub-stream of `seed` (splitmix64 finalizer
/// over the seed and an FNV-1a hash of the label).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sub_rng(seed: u64, label: &str) -> Rng {
    seeded(derive_seed(seed, label))
}
