//! Entropy, variance, distance and convergence diagnostics.

pub mod convergence;
pub mod entropy;
pub mod metrics;
pub mod variance;

pub use convergence::{convergence_order, least_squares_slope, ConvergenceReport, ConvergenceStudy};
pub use entropy::{
    delta_entropy_gradient_vs_ddim, entropy_reducing_interval, entropy_reducing_interval_snr, entropy_trajectory,
    gaussian_entropy, EntropyRecord,
};
pub use metrics::{
    frechet_from_moments, frechet_gaussian, sample_moments, sliced_wasserstein, wasserstein_1d_sorted, MetricReport,
};
pub use variance::{
    data_vs_noise_variance, reconstruction_decomposition_check, Centering, DecompositionReport, VarianceComparison,
};
