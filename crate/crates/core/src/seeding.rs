//! Deterministic random streams.
//!
//! Every random consumer gets its own ChaCha stream derived from the master
//! seed, a purpose tag and an index, so that dropping or reordering work
//! items never shifts the randomness seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for derived streams.
pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const ANATOMY: u64 = 3;
    pub const SAMPLER: u64 = 4;
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator keyed by `(master, tag)`.
pub fn stream(master: u64, tag: u64, index: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(b"anonatk1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Stream for a `(grid point, repetition)` pair.
pub fn grid_stream(master: u64, tag: u64, point: u64, rep: u64) -> Rng {
    stream(master, tag, (point << 32) | (rep & 0xffff_ffff))
}
