//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 keyed by a master seed,
//! with a stream id selecting an independent substream. Row-wise operations
//! use the row id as the stream so results do not depend on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Name recorded in checkpoint metadata.
pub const RNG_ALGORITHM: &str = "chacha20";

pub type Rng = ChaCha20Rng;

pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and a purpose tag (splitmix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
