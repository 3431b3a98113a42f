//! Built-in benchmark mixtures and the synthetic level-shift series used
//! by the examples, the test suite and the `fixtures` subcommand.

use crate::gaussmix::{GaussianComponent, GaussianMixture};
use crate::util::SplitMix64;

/// Weights of the 1-D benchmark as printed; they sum to one only up to the
/// printed precision, so loaders normalize.
const BENCH_1D: [(f64, f64, f64); 16] = [
    (0.30, 0.0, 0.5),
    (0.15, 5.0, 1.0),
    (0.15, -4.0, 1.0),
    (0.05, 0.2, 9.0),
    (0.05, -1.5, 2.0),
    (0.0686, 1.03982, 4.39842),
    (0.03472, -1.55209, 3.78821),
    (0.07578, -1.35090, 2.78963),
    (0.00101, -0.25711, 1.18460),
    (0.00011, 2.00426, 1.14186),
    (0.01699, 1.44357, 1.00000),
    (0.00003, -2.15010, 1.02979),
    (0.05787, -0.58808, 1.21395),
    (0.00039, 1.57966, 1.35196),
    (0.02193, 1.87170, 1.12458),
    (0.02257, 0.55285, 1.05299),
];

/// (weight, mean1, mean2, cov11, cov22, cov21)
const BENCH_2D: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.30, 0.0, 0.0, 1.0, 1.0, 0.0),
    (0.20, 2.0, 0.0, 4.0, 2.0, 0.0),
    (0.16, 3.0, 3.0, 2.0, 2.0, -0.5),
    (0.11, -4.0, -4.0, 4.0, 4.0, 2.0),
    (0.08, -1.0, 1.0, 9.0, 9.0, 4.0),
    (0.06, 2.0, -4.0, 4.0, 9.0, 2.0),
    (0.04, 0.0, 2.0, 4.0, 1.0, -0.5),
    (0.03, -2.0, 4.0, 9.0, 9.0, 0.0),
    (0.01, -2.0, 0.0, 2.0, 1.0, 0.0),
    (0.01, 1.0, -2.0, 1.0, 1.0, 0.0),
];

/// 16-component one-dimensional benchmark mixture, weights as printed
/// (unnormalized).
pub fn benchmark_mixture_1d() -> GaussianMixture {
    GaussianMixture::new(
        BENCH_1D
            .iter()
            .map(|&(w, m, v)| GaussianComponent::new_1d(w, m, v).expect("valid fixture"))
            .collect(),
    )
    .expect("valid fixture")
}

/// 10-component two-dimensional benchmark mixture.
pub fn benchmark_mixture_2d() -> GaussianMixture {
    GaussianMixture::new(
        BENCH_2D
            .iter()
            .map(|&(w, m1, m2, c11, c22, c21)| {
                GaussianComponent::new(
                    w,
                    nalgebra::dvector![m1, m2],
                    nalgebra::dmatrix![c11, c21; c21, c22],
                )
                .expect("valid fixture")
            })
            .collect(),
    )
    .expect("valid fixture")
}

pub const LEVEL_SHIFT_LEN: usize = 400;
pub const LEVEL_SHIFT_SEED: u64 = 23;

/// Piecewise-constant level with two shifts plus unit Gaussian noise;
/// regenerates bit-identically for a given seed.
pub fn level_shift_series(seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..LEVEL_SHIFT_LEN)
        .map(|t| level_at(t) + rng.next_normal())
        .collect()
}

fn level_at(t: usize) -> f64 {
    if t < 150 {
        0.0
    } else if t < 300 {
        3.0
    } else {
        1.0
    }
}
