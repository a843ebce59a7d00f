//! Mutual-information regularized defenses against model inversion.
//!
//! The crate bundles the three defendable model families (linear regression,
//! ID3 trees, a small stochastic-bottleneck MLP), their differentially private
//! baselines, the attribute-inference attacks used to score them, utility and
//! attack metrics, exact/Monte-Carlo evaluators for the semantic and
//! indistinguishability games, and the sweep harness that ties them together.

pub mod attacks;
pub mod data;
pub mod error;
pub mod games;
pub mod harness;
pub mod linreg;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod seed;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
pub use seed::Seed;
