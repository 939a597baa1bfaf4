//! Seeded, stream-split random number generation.
//!
//! Every random draw in the oracle and the simulator comes from a ChaCha8
//! stream selected by `(seed, domain, a, b)`. The key is derived from the
//! seed and domain, and the 64-bit ChaCha stream id is `a << 32 | b`, so
//! draws for `(iteration, sample)` never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that must not share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 1,
    Init = 2,
    Schedule = 3,
    Assignment = 4,
    Noise = 5,
    MonteCarlo = 6,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `(a, b)` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, a: u32, b: u32) -> ChaCha8Rng {
    let key = mix(seed ^ mix(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(((a as u64) << 32) | b as u64);
    rng
}
