//! Bounded-confidence opinion dynamics over random m-cliques.
//!
//! Each node averages over a randomly drawn clique of `m` nodes and moves a
//! fraction `delta` towards that average when it lies within `eta` of its own
//! opinion. The crate provides the simulator, closed-form oracles for the
//! all-network case, order-statistic analysis of clique averages, samplers for
//! structured initial conditions, verdict detectors and a reproducible Monte
//! Carlo harness.

pub mod config;
pub mod detect;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod initial;
pub mod montecarlo;
pub mod order;
pub mod rng;

pub use detect::{classify, ClassificationResult, Thresholds, Verdict};
pub use dynamics::{
    clique_average, default_window, global_mean_step, sample_cliques, simulate, step, CliqueDraw,
    CliquePolicy, ModelParams, NodeStats, OpinionVector, Recording, TrajectoryRecord,
};
pub use error::{Error, Result};
pub use initial::InitialSpec;
pub use montecarlo::{ExperimentConfig, ProbabilityEstimate};
pub use rng::{RngSpec, TrialRng};
