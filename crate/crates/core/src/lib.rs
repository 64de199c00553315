//! Simulation of Scaffold and FedAvg on synthetic heterogeneous federated
//! problems, with estimators for the stationary distribution of the Scaffold
//! chain and the first-order predictions it is checked against.

pub mod algorithms;
pub mod chain;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod optimum;
pub mod rng;
pub mod stationary;

pub use chain::{lambda_norm_sq, Algorithm, ChainState, RunConfig};
pub use error::{Error, Result};
pub use objectives::{Batch, Loss, Problem};
pub use optimum::{build_certificate, certify, solve_optimum, OptimumCertificate};
