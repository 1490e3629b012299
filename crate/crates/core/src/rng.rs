//! Named random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Splits a master seed into independent, named streams ("split", "init",
/// "em-noise", ...). Perturbing one stream leaves the others untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed_for(&self, name: &str) -> u64 {
        splitmix64(self.master ^ fnv1a(name.as_bytes()))
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.seed_for(name))
    }

    /// Stream for the `index`-th repetition of a named purpose.
    pub fn indexed(&self, name: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(splitmix64(self.seed_for(name) ^ splitmix64(index)))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
