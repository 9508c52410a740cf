//! Seeded random streams. ChaCha8 is a counter-based generator whose output
//! depends only on (seed, stream, word position), so draws are identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

pub fn seeded(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for a named component (`"split"`, `"init"`, `"dropout"`, ...).
/// FNV-1a over the label, mixed with the parent seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn derived(seed: u64, label: &str) -> RngStream {
    seeded(derive_seed(seed, label))
}
