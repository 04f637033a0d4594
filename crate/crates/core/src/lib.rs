//! Neural-network state-space estimation.
//!
//! The state vector of a [`model::Topology`] stacks the most recent target
//! positions together with every weight of a small surrogate network. The
//! generic Bayesian back-ends in [`estimators`] (linear, extended and unscented
//! Kalman, bootstrap particle) then learn the network online while filtering
//! the positions. [`baselines`] holds the classical kinematic and
//! position-stack comparison models, [`signals`] the trajectory sources and
//! CSV formats, and [`bench`] the experiment runner used by the `nnsse` CLI.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod signals;

pub use error::{Error, Result};
