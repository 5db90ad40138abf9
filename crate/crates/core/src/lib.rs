//! Monte Carlo laboratory for trained elephant random walks.
//!
//! The walk repeats (with probability `p`) or contradicts a uniformly chosen
//! past step; "training" fixes the first `k` steps. This crate simulates such
//! walks with O(1) state, builds their exact martingale transforms, evaluates
//! the closed-form limit laws (Stable(1/2) return-time laws, noise-reinforced
//! Brownian motion marginals, Gaussian overtrained limits), and runs
//! censoring-aware goodness-of-fit experiments against them.

pub mod gamma;
pub mod harness;
pub mod laws;
pub mod real;
pub mod special;
pub mod stats;
pub mod walk;

pub use real::Real;
pub use walk::{MemoryParam, Regime, TrainingPrefix, WalkState};

/// Concrete f64 aliases for the generic law types.
pub type StableHalf = laws::StableHalfLaw<f64>;
pub type DiffusiveReturn = laws::DiffusiveReturnLaw<f64>;
pub type Nrbm = laws::NrbmLaw<f64>;
pub type Gaussian = laws::GaussianLimit<f64>;
pub type WeightTable = gamma::GammaWeightTable<f64>;
