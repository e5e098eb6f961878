//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a root seed plus a label and a few integers, so results do not
//! depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `root`, a label and `parts` into a new seed.
pub fn derive_seed(root: u64, label: &str, parts: &[u64]) -> u64 {
    // FNV-1a over the label.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut acc = splitmix(root ^ splitmix(h));
    for &p in parts {
        acc = splitmix(acc ^ splitmix(p));
    }
    acc
}

pub fn stream(root: u64, label: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, parts))
}
