//! Exact-oracle laboratory for policy gradient (PG), natural policy gradient
//! (NPG) and their stochastic recursive variance-reduced variants
//! (SRVR-PG, SRVR-NPG) on small tabular MDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: tabular MDPs, dynamic-programming solvers and visitation measures.
//! * [`policy`]: softmax and Gaussian parametrizations, score functions,
//!   Fisher information and exact gradient oracles.
//! * [`sampler`]: seeded trajectory generation, `(s, a) ~ nu` sampling and
//!   advantage estimation with a trajectory budget counter.
//! * [`estimators`]: truncated GPOMDP, importance weights, the weighted
//!   estimator and the recursive semi-stochastic gradient.
//! * [`npg_solver`]: compatible function approximation subproblems.
//! * [`algorithms`]: the four training drivers and parameter schedules.
//! * [`analysis`]: problem constants, the global-gap decomposition and bound audits.
//! * [`verify`]: the acceptance checks shared by the CLI and the test suite.

// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algorithms;
pub mod analysis;
pub mod env;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mdp;
pub mod npg_solver;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod verify;

pub use error::{Error, Result};
