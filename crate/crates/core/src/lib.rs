//! Tabular Extreme Q-Learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`gumbel`]: Gumbel density, sampling, maximum-likelihood fitting and the
//!   log-sum-exp operator `L^β(X) = β log E[e^{X/β}]`.
//! - [`regression`]: the stabilised Gumbel (Linex) regression loss and the
//!   estimators and concentration bounds built on it.
//! - [`mdp`]: finite MDPs, gridworlds, soft/hard Bellman operators and exact
//!   fixed-point solvers used as ground truth.
//! - [`policy`]: softmax/AWR/reverse-KL policy extraction and exact evaluation.
//! - [`xql`]: ExtremeV/ExtremeQ learners, offline and online loops,
//!   deterministic value/Q iteration, conservatism diagnostics.
//! - [`gem`]: simulator for how estimation noise propagates through max backups.
//! - [`harness`]: datasets, CSV/JSON I/O, experiment configs and the runner
//!   behind the `xql` command line.

pub mod error;
pub mod gem;
pub mod gumbel;
pub mod harness;
pub mod mdp;
pub mod policy;
pub mod regression;
pub mod rng;
pub mod xql;

pub use error::{Result, XqlError};
