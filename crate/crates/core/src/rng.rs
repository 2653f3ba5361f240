//! Seeding and hashing primitives shared across the crate.
//!
//! Every random draw in this crate flows through [`Xoshiro256StarStar`]
//! seeded via SplitMix64 (`seed_from_u64`), so generation is reproducible
//! bit-for-bit across platforms and runs. Derived seeds are position-based:
//! they hash the root seed together with string tags (dialog id, purpose
//! label) and an index, never with any execution-order state.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// Streaming FNV-1a 64-bit hasher.
#[derive(Debug, Clone)]
pub struct Fnv1a64(u64);

impl Fnv1a64 {
    pub fn new() -> Self {
        Fnv1a64(FNV_OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

/// FNV-1a 64-bit over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::new();
    h.write(bytes);
    h.finish()
}

/// Derives a child seed from a root seed and a list of string tags.
///
/// Tags are separated by a 0x1f byte so `["ab", "c"]` and `["a", "bc"]`
/// derive different seeds.
pub fn derive_seed(root: u64, tags: &[&str]) -> u64 {
    let mut h = Fnv1a64::new();
    h.write(&root.to_le_bytes());
    for tag in tags {
        h.write(&[0x1f]);
        h.write(tag.as_bytes());
    }
    h.finish()
}

/// Derives a child seed from a root seed, a tag, and a numeric index.
pub fn derive_seed_n(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = Fnv1a64::new();
    h.write(&root.to_le_bytes());
    h.write(&[0x1f]);
    h.write(tag.as_bytes());
    h.write(&[0x1f]);
    h.write(&index.to_le_bytes());
    h.finish()
}

/// The crate-wide deterministic generator.
pub fn rng_from_seed(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}
