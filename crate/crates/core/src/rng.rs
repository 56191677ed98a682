//! Stable seed derivation.
//!
//! Sub-seeds are derived from a base seed and a list of string/integer tags so
//! that per-(dialogue, target) randomness does not depend on iteration order or
//! on the standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug)]
pub enum Tag<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Tag<'a> {
    fn from(s: &'a str) -> Self {
        Tag::Str(s)
    }
}

impl<'a> From<&'a String> for Tag<'a> {
    fn from(s: &'a String) -> Self {
        Tag::Str(s)
    }
}

impl From<u64> for Tag<'_> {
    fn from(v: u64) -> Self {
        Tag::Int(v)
    }
}

impl From<usize> for Tag<'_> {
    fn from(v: usize) -> Self {
        Tag::Int(v as u64)
    }
}

/// Mixes `base` with `tags` into a new seed.
pub fn derive_seed(base: u64, tags: &[Tag<'_>]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(&base.to_le_bytes());
    for t in tags {
        match t {
            Tag::Str(s) => {
                feed(&[0x53]);
                feed(&(s.len() as u64).to_le_bytes());
                feed(s.as_bytes());
            }
            Tag::Int(v) => {
                feed(&[0x49]);
                feed(&v.to_le_bytes());
            }
        }
    }
    splitmix64(h)
}

pub fn rng_for(base: u64, tags: &[Tag<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
