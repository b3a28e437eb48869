//! Simulator and analytic bound-checker for theta-weighted random loop
//! models on d-ary and Galton-Watson trees.
//!
//! Link configurations (Poisson crosses and bars on tree edges over the
//! periodic time interval [0, beta)) induce a partition of the space-time
//! cylinder into loops; configurations are reweighted by theta^L where L is
//! the loop count. The crate provides:
//!
//! - [`trees`]: d-ary trees, Galton-Watson sampling, offspring moments;
//! - [`links`]: the cross/bar Poisson processes on edges;
//! - [`loops`]: loop construction, counting and reach events;
//! - [`measure`]: importance-sampling and MCMC estimators for the weighted
//!   measure and its quenched average over random trees;
//! - [`bounds`]: closed-form partition-function and long-loop bounds,
//!   recursion traces and phase-transition conditions;
//! - [`cli`]: the experiment harness behind the `gwloops` binary.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod links;
pub mod loops;
pub mod measure;
pub mod rng;
pub mod trees;

pub use error::{Error, Result};
pub use links::{Link, LinkConfig, LinkKind, ModelParams};
pub use loops::{build_loops, check_prop1, subtree_loop_counts, LoopPartition};
pub use measure::{
    estimate_partition_function, estimate_quenched, estimate_reach_profile,
    estimate_weighted_prob, mcmc_reach_profile, mcmc_sampler, quenched_reach_profile,
    InnerEstimator, McmcChain, McmcSchedule, Method, RatioEstimate,
};
pub use trees::{regular_tree, sample_gw_tree, OffspringDistribution, Tree};
