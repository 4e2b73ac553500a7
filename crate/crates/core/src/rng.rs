//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by
//! `(master seed, index, purpose)`. The key for `(master, purpose)` seeds the
//! generator and the index picks one of its 2^64 independent streams, so
//! realization `r` of an ensemble sees the same numbers no matter which
//! thread evaluates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TrainSet = 1,
    TestSet = 2,
    Partition = 3,
    ModelInit = 4,
    EigenStart = 5,
    TrialBatch = 6,
    Reference = 7,
    Training = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(master: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let key = splitmix64(master ^ splitmix64(purpose as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. the seed of one epoch's shuffle inside a run.
pub fn derive_seed(master: u64, index: u64, purpose: Purpose) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(purpose as u64)) ^ index)
}
