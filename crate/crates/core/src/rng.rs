//! Seeded random streams. Every consumer gets its own ChaCha stream keyed off the run seed,
//! so changing how much one consumer draws never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Disout = 4,
    Split = 5,
    Synth = 6,
    Crop = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// A stream further keyed by an index, e.g. one per synthetic clip.
pub fn indexed(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut keyed = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    keyed.set_stream(((which as u64) << 32) | (index & 0xFFFF_FFFF));
    keyed
}
