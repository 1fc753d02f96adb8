//! Seeded randomness helpers.
//!
//! Everything random in this crate flows through a ChaCha8 stream created
//! here, with uniform draws derived by fixed bit arithmetic. This keeps
//! generated cohorts, parameter initializations, and shuffles bit-identical
//! across platforms and independent of distribution-sampling details in
//! external crates.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream under the same seed (init vs. shuffling, etc.).
pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in [0, 1) with 53 bits of precision.
pub(crate) fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in [0, n). n must be positive.
pub(crate) fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    debug_assert!(n > 0);
    // fixed-point multiply; bias is O(n / 2^64), irrelevant here
    ((rng.next_u64() as u128 * n as u128) >> 64) as u64
}

/// In-place Fisher-Yates shuffle.
pub(crate) fn shuffle<T>(rng: &mut impl RngCore, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = below(rng, (i + 1) as u64) as usize;
        xs.swap(i, j);
    }
}
