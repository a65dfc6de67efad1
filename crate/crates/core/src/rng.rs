//! Reproducible random streams.
//!
//! Every chain draws from its own ChaCha8 stream. The 64-bit master seed
//! fixes the key; the stream number is a packed [`StreamKey`], so two keys
//! that differ in any field address disjoint streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type McRng = ChaCha8Rng;

/// Which pass of an experiment a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Pass {
    Calibration = 1,
    Measurement = 2,
    Chain = 3,
    Test = 4,
    Smoothing = 5,
}

/// Address of one random stream below a master seed.
///
/// Packed as `pass:8 | repetition:8 | level:16 | chain:32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub pass: Pass,
    pub repetition: u8,
    pub level: u16,
    pub chain: u32,
}

impl StreamKey {
    pub fn new(pass: Pass, repetition: u8, level: u16, chain: u32) -> Self {
        Self {
            pass,
            repetition,
            level,
            chain,
        }
    }

    pub fn stream_id(&self) -> u64 {
        ((self.pass as u64) << 56)
            | ((self.repetition as u64) << 48)
            | ((self.level as u64) << 32)
            | self.chain as u64
    }

    pub fn rng(&self, master_seed: u64) -> McRng {
        stream(master_seed, self.stream_id())
    }
}

/// Generator for `stream` under `master_seed`.
pub fn stream(master_seed: u64, stream: u64) -> McRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
