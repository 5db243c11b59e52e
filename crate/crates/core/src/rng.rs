//! Seeded randomness helpers.
//!
//! All stochastic code paths draw through these functions so that a fixed
//! seed yields bit-identical output regardless of `rand`'s internal
//! distribution algorithms (which are not guaranteed stable across versions).

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform f64 in `[0, 1)` from the top 53 bits of a u64 draw.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unbiased uniform integer in `[0, n)` by rejection.
pub fn uniform_index(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}

/// `k` distinct indices from `[0, n)`, by partial Fisher-Yates.
pub fn distinct_indices(rng: &mut impl RngCore, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Standard normal draw via Box-Muller.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    loop {
        let u1 = uniform(rng);
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2 = uniform(rng);
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}
