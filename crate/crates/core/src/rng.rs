//! Seeded random streams.
//!
//! Every random draw in the pipeline comes from a [`ChaCha8Rng`] whose seed is
//! derived from one root seed and a stream label:
//!
//! ```text
//! stream_seed = splitmix64(root ^ fnv1a64(label))
//! ```
//!
//! Labels are plain strings such as `"data"`, `"mlp/init"` or `"cost/17"`, so
//! adding a new consumer never perturbs the draws of an existing one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream named `label` under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a64(label))
}

/// Random generator for the stream named `label` under `root`.
pub fn stream(root: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}

/// Standard normal draw by the Box-Muller transform (cosine branch).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] keeps the logarithm finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, "a").gen()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut s1 = stream(7, "a");
        let mut s2 = stream(7, "b");
        assert_ne!(s1.gen::<u64>(), s2.gen::<u64>());
    }

    #[test]
    fn box_muller_moments() {
        let mut rng = stream(1, "normal");
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
