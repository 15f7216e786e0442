//! Named random streams.
//!
//! Every random draw in the workbench comes from a ChaCha8 stream whose seed is
//! `stream_seed(global_seed, purpose, id)`. The derivation only uses FNV-1a over
//! the purpose bytes and the SplitMix64 finalizer, so the same
//! `(global_seed, purpose, id)` triple yields the same stream on every machine
//! and in every process, independent of evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `(global_seed, purpose, id)`.
pub fn stream_seed(global_seed: u64, purpose: &str, id: u64) -> u64 {
    let mut h = splitmix64(global_seed);
    h = splitmix64(h ^ fnv1a(purpose.as_bytes()));
    splitmix64(h ^ id)
}

pub fn stream(global_seed: u64, purpose: &str, id: u64) -> Rng {
    Rng::seed_from_u64(stream_seed(global_seed, purpose, id))
}
