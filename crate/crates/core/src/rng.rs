//! Seed derivation for the master, initialization and per-task streams.
//!
//! Every stream is a `Pcg64Mcg` seeded from a 64-bit value. Per-task seeds
//! are a pure function of `(master_seed, task_id)`, so the randomness used by
//! an execution does not depend on which worker runs it or when.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

/// Stream used to draw initial agent states.
pub const INIT_STREAM: u64 = 0x1a2b_3c4d_0000_0001;
/// Stream owned by the serialized creation routine.
pub const CREATE_STREAM: u64 = 0x1a2b_3c4d_0000_0002;
/// Domain of per-task child seeds.
pub const TASK_STREAM: u64 = 0x1a2b_3c4d_0000_0003;

pub type SimRng = Pcg64Mcg;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` within `domain` from `master_seed`.
#[inline]
pub fn derive_seed(master_seed: u64, domain: u64, index: u64) -> u64 {
    let base = mix64(master_seed ^ mix64(domain));
    mix64(base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Child seed embedded in the recipe of task `task_id`.
#[inline]
pub fn child_seed(master_seed: u64, task_id: u64) -> u64 {
    derive_seed(master_seed, TASK_STREAM, task_id)
}

pub fn stream(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn init_stream(master_seed: u64) -> SimRng {
    stream(derive_seed(master_seed, INIT_STREAM, 0))
}

pub fn create_stream(master_seed: u64) -> SimRng {
    stream(derive_seed(master_seed, CREATE_STREAM, 0))
}
