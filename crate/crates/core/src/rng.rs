//! Keyed random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from
//! `(global seed, purpose tag, index)`, so training shuffles, noise draws,
//! client sampling and so on never share state. Changing how many numbers one
//! consumer draws cannot shift another consumer's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a over the tag bytes.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag_hash(tag).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"valley\0\0");
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, for handing to APIs that take a plain `u64`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, tag, index).next_u64()
}
