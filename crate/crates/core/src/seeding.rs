//! Deterministic seed derivation.
//!
//! Every random decision in the toolkit is driven by an RNG whose seed is
//! derived from a master seed plus a stable label (split id, video id,
//! component name). The hash is a fixed FNV-1a/splitmix construction so the
//! derived streams are identical across platforms and runs, which is what
//! makes parallel generation order-independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha8 is cheap, portable, and its
/// `seed_from_u64` expansion is stable.
pub type DetRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; spreads low-entropy inputs over all 64 bits.
fn finalize(mut h: u64) -> u64 {
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Stable 64-bit hash of a master seed plus string labels.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    for label in labels {
        h = fnv1a(h, label.as_bytes());
        // Separator so ["ab", "c"] and ["a", "bc"] differ.
        h = fnv1a(h, &[0xff]);
    }
    finalize(h)
}

/// Seed for one benchmark split.
pub fn split_seed(master: u64, split_id: u32) -> u64 {
    derive_seed(master, &["split", &split_id.to_string()])
}

/// Per-video seed; a pure function of (master, split, video id) so worker
/// scheduling cannot affect outputs.
pub fn video_seed(master: u64, split_id: u32, video_id: &str) -> u64 {
    derive_seed(master, &["video", &split_id.to_string(), video_id])
}

/// Seed for a named component ("init", "data", "augment", ...).
pub fn named_seed(master: u64, name: &str) -> u64 {
    derive_seed(master, &[name])
}

pub fn rng_from(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}
