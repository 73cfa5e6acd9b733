//! Counter-based random streams.
//!
//! Every random decision in a simulation is drawn from a ChaCha stream
//! addressed by `(seed, sample index, purpose, salt)`. Streams do not depend
//! on the order in which samples are processed, so parallel runs reproduce
//! sequential ones exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Field = 1,
    Bridge = 2,
    Crossing = 3,
    CableEscape = 4,
    Excursions = 5,
    Inclusion = 6,
    Signs = 7,
    Stub = 8,
    Auxiliary = 9,
}

/// Identifies one Monte Carlo sample of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, index: u64) -> Self {
        StreamKey { seed, index }
    }

    /// A fresh generator for `purpose`; `salt` separates sub-streams such as
    /// individual edges.
    pub fn rng(&self, purpose: Purpose, salt: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let tag = splitmix64(splitmix64(self.index) ^ ((purpose as u64) << 56) ^ splitmix64(salt.wrapping_add(0x5151)));
        rng.set_stream(tag);
        rng
    }

    /// Key of a derived experiment sharing the seed, e.g. an independent copy
    /// of the field used as a reference sample.
    pub fn derive(&self, tag: u64) -> StreamKey {
        StreamKey { seed: splitmix64(self.seed ^ splitmix64(tag)), index: self.index }
    }
}

/// The SplitMix64 finalizer, used to spread structured keys over 64 bits.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
