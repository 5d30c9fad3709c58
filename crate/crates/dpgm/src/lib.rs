//! Online, inexact, distributed proximal-gradient optimization over networks.
//!
//! The crate simulates a network of nodes tracking the minimizer trajectory of
//! a time-varying composite cost, of which each node only sees its local part.
//! It ships:
//!
//! - [`network`]: graph families and Metropolis-Hastings consensus matrices
//!   with their spectral quantities;
//! - [`problems`]: composite local costs (smooth strongly convex + L1) and the
//!   time-varying sparse regression scenario generator;
//! - [`solvers`]: the online inexact DPGM loop with injectable noise on
//!   states, gradients and proximal evaluations, plus PG-EXTRA and NIDS
//!   baselines under the identical harness;
//! - [`oracle`]: high-precision consensus and relaxed optimum trajectories and
//!   measured drift constants;
//! - [`bounds`]: the tracking-error linear system, its step-size conditions,
//!   per-interval composition and asymptotic bound;
//! - [`harness`]: seeded Monte Carlo experiment sweeps with CSV output and
//!   summary tables.
//!
//! The `dpgm` binary exposes the harness as a CLI; see the repository README.

pub mod bounds;
pub mod config;
pub mod harness;
pub mod network;
pub mod oracle;
pub mod problems;
pub mod solvers;
pub mod stacked;
