//! Shared fixtures for the benchmarks.

use evodiff_core::solver::draw_initial;
use evodiff_core::{make_grid, DataDistribution, DenoiserOracle, GridPolicy, NoiseSchedule, SolverKind, TimeGrid};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::vp_linear()
}

pub fn logsnr_grid(n: usize) -> TimeGrid {
    make_grid(&schedule(), GridPolicy::LogSnrUniform, n, 1.0, 1e-3).expect("valid grid")
}

pub fn oracle(dist: &DataDistribution, kind: &SolverKind) -> DenoiserOracle {
    DenoiserOracle::new(dist.clone(), schedule(), kind.preferred_parameterization())
}

/// `count` initial states `x_T` for `grid`.
pub fn initial_states(dim: usize, grid: &TimeGrid, count: usize, seed: u64) -> Vec<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| draw_initial(&schedule(), grid, dim, &mut rng).expect("valid schedule"))
        .collect()
}

/// `count` exact draws from `dist`, one per row.
pub fn data_samples(dist: &DataDistribution, count: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((count, dist.dim()));
    for mut row in out.rows_mut() {
        row.assign(&dist.sample(&mut rng));
    }
    out
}
