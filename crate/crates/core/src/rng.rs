//! Deterministic random streams.
//!
//! A scenario carries one 64-bit master seed. Every stochastic component
//! (fading latent, pointing jitter, receiver noise, quantile tables) draws
//! from its own ChaCha8 stream whose seed is derived from the master with
//! the SplitMix64 finalizer:
//!
//! ```text
//! stream_seed(master, i) = mix(master + (i + 1) * 0x9E3779B97F4A7C15)
//! mix(z):
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     z ^ (z >> 31)
//! ```
//!
//! All arithmetic is wrapping 64-bit. The 64-bit stream seed is expanded
//! into the ChaCha key with `SeedableRng::seed_from_u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used by every simulation component.
pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-streams carved out of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Fading = 0,
    Pointing = 1,
    Noise = 2,
    QuantileTable = 3,
}

pub fn stream_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stream_rng(master: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(stream_seed(master, stream as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(stream_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(stream_seed(0, 1), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let mut a = stream_rng(42, Stream::Fading);
        let mut b = stream_rng(42, Stream::Noise);
        let mut c = stream_rng(42, Stream::Fading);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, c.next_u64());
    }
}
