//! Finite POMDP solving and verification of Bayesian interpretations of
//! stochastic Moore machines.
//!
//! - [`prob`]: labeled finite distributions and Markov kernels.
//! - [`machine`]: stochastic Moore machines and simulation.
//! - [`pomdp`]: POMDP models and exact belief update.
//! - [`solver`]: MDP and alpha-vector POMDP value iteration, the brute-force
//!   policy-tree oracle, and the canonical belief machine of a policy.
//! - [`interpretation`]: consistency checks for filtering and POMDP-solution
//!   interpretations.
//! - [`io`]: JSON documents and reports.
//! - [`sondik`]: the bundled two-state example.

pub mod error;
pub mod interpretation;
pub mod io;
pub mod machine;
pub mod pomdp;
pub mod prob;
pub mod solver;
pub mod sondik;

pub use error::{Error, Result};
