//! Online distributed zeroth-order mirror descent.
//!
//! A network of agents, each holding a private time-varying convex objective,
//! cooperatively tracks the minimizer of the network-average objective using
//! only noisy function values. Every round each agent
//!
//! 1. builds a two-point gradient estimate weighted by a kernel `K(r)` whose
//!    moment conditions cancel low-order Taylor terms and the noise mean,
//! 2. clips the estimate to radius `alpha_t`,
//! 3. averages its neighbours' states with a doubly stochastic weight matrix,
//! 4. takes a mirror-descent step from the averaged state.
//!
//! The crate also carries the instrumentation used to check the measurable
//! consequences of the analysis: estimator bias, mixing-rate envelopes,
//! consensus envelopes and dynamic regret.

pub mod config;
pub mod engine;
pub mod estimator;
pub mod graph;
pub mod kernels;
pub mod mirror;
pub mod problems;
pub mod quadrature;
pub mod report;
pub mod rng;

pub use engine::{run, RunMetrics, RunSetup, StepSchedules};
pub use estimator::{clip, zo_estimate, EstimateRecord};
pub use graph::{GraphSchedule, MixingConstants, WeightMatrix};
pub use kernels::Kernel;
pub use mirror::MirrorMap;
pub use problems::{ConstraintSet, NoiseModel, OnlineProblem};

/// Euclidean norm.
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
