//! Diffusion ODE samplers with variance-controlled gradient corrections,
//! analytic oracles for testing them, and the diagnostics used to compare them.
//!
//! Modules, bottom up:
//!
//! - [`schedule`]: noise schedules, κ-parameterizations, time grids, step ratios.
//! - [`oracle`]: closed-form denoisers for Gaussian and Gaussian-mixture data.
//! - [`varopt`]: closed-form ζ and η weights and their maps.
//! - [`solver`]: DDIM, single-step, multistep and EVODiff samplers.
//! - [`diagnostics`]: entropy, variance and distribution-distance checks.
//! - [`harness`]: experiment configs, seeding, CSV and manifest output.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod schedule;
pub mod solver;
pub mod varopt;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use oracle::{DataDistribution, Denoiser, DenoiserOracle};
pub use schedule::{make_grid, GridPolicy, NoiseSchedule, Parameterization, RStrategy, TimeGrid};
pub use solver::{run, EvoDiffConfig, GradientWeight, RunOutput, SolverKind, StepRecord};
