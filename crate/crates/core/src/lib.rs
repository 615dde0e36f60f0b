//! Cooperative learning of an unknown vector by agents on time-varying graphs.
//!
//! Agents hold estimates `v_i(t)` of a vector μ. At each step they nudge
//! their estimates toward noisy observations of their neighbors, weighted by
//! lazy Metropolis weights, and the agents that happen to hold a noisy sample
//! of μ also move toward it. The stepsize decays as `1/(t + offset)^(1-ε)`.
//!
//! Modules:
//!
//! - [`graph`]: snapshots, weight matrices, named topologies, B-connected sequences
//! - [`analysis`]: hitting times, sieve constant, λ_max, diameter, norm identity
//! - [`protocol`]: state, noise, stepsize, and the update in two equivalent forms
//! - [`bounds`]: closed-form convergence bounds and the decay-recursion toolkit
//! - [`harness`]: configured runs, Monte Carlo aggregation, CSV/JSON export
//! - [`checks`]: the inequality suites behind `coop-learn verify`
//! - [`cli`]: the command-line front end

pub mod analysis;
pub mod bounds;
pub mod checks;
pub mod cli;
pub mod graph;
pub mod harness;
pub mod protocol;
pub mod seed;

pub use analysis::{hitting_times, lambda_max, sieve_constant, HittingTimes, SieveResult};
pub use graph::{generate, metropolis_matrix, protocol_matrix, Family, GraphSequence, GraphSnapshot, WeightMatrix};
pub use harness::{monte_carlo, run, ExperimentConfig, RunResult, TrialAggregate};
pub use protocol::{
    max_error, step, step_matrix_form, variance, NoiseDistribution, NoiseModel, NoiseSource, ProtocolState,
    StepsizeSchedule, Target,
};
