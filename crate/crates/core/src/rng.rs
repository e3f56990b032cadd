//! Seeded random streams.
//!
//! Every source of randomness in the engine is a ChaCha8 stream derived from
//! a user seed plus a fixed stream tag, so runs are reproducible bit for bit
//! across platforms and independent of each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream tags; each subsystem draws from its own stream.
pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const WIDTHS: u64 = 0x03;
    pub const AUGMENT: u64 = 0x04;
    pub const SYNTH: u64 = 0x05;
    pub const PROBE: u64 = 0x06;
}

/// Derive an independent stream from `(seed, tag)` and an extra index
/// (epoch number, width slot, ...). SplitMix64 mixing keeps nearby seeds
/// uncorrelated.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// One standard normal draw (Box-Muller, always consumes two uniforms).
pub fn normal_f64(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
