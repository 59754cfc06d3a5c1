//! Seed derivation. Every random choice in a run descends from one `u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Stream tags for the stages of a protocol run.
pub const STREAM_CLIENT: u64 = 0x636c_6965_6e74;
pub const STREAM_DECOMPRESS: u64 = 0x6465_636f_6d70;
pub const STREAM_SUBSAMPLE: u64 = 0x7375_6273;
pub const STREAM_NOISE: u64 = 0x006e_6f69_7365;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit hash of `(seed, stream)`: `splitmix64(seed ^ splitmix64(stream))`.
///
/// Used for per-cluster sub-seeds, so a cluster's draws do not depend on the
/// order in which clusters are processed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
