//! Seeded random streams. Every stochastic component draws from its own
//! ChaCha stream so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

/// FNV-1a; stable across platforms and releases, unlike `core::hash`.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A stream derived from `seed` and a component label.
pub fn stream(seed: u64, label: &str) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

/// Zero-mean Gaussian draw with standard deviation `sigma` (0 → exactly 0).
pub fn gauss(rng: &mut SimRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

/// Bernoulli draw; `p <= 0` never fires, `p >= 1` always fires, and neither
/// consumes randomness.
pub fn chance(rng: &mut SimRng, p: f64) -> bool {
    use rand::Rng;
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random::<f64>() < p
    }
}

pub fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..hi)
}
