//! Named random substreams derived from one seed.
//!
//! Every consumer of randomness asks for a stream by name, so adding a new
//! consumer never shifts the draws seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child stream; children with different names are independent.
    pub fn child(&self, name: &str) -> SeedStream {
        SeedStream { seed: splitmix64(self.seed ^ fnv1a(name.as_bytes())) }
    }

    /// The `i`th child in an indexed family (folds, imputations, replicates).
    pub fn nth(&self, i: u64) -> SeedStream {
        SeedStream { seed: splitmix64(self.seed.wrapping_add(splitmix64(i ^ 0x5eed))) }
    }

    pub fn rng(&self, name: &str) -> Rng {
        Rng::seed_from_u64(self.child(name).seed)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
