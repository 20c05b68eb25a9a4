//! Seeded generators. Every random draw in the crate goes through ChaCha8 so
//! streams are identical across platforms and independent of thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Mat;

/// SplitMix64 finalizer, used to fold several keys into one stream id.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds a sequence of keys into one 64-bit stream id.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x51_7cc1_b727_220a, |acc, &p| mix64(acc ^ mix64(p)))
}

/// A ChaCha8 generator for `seed` on an independent `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major `rows x cols` matrix with i.i.d. `N(0, std^2)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64, stream: u64) -> Mat {
    let mut rng = seeded_rng(seed, stream);
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}
