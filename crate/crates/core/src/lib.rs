//! Hawkes-process models of competing fake-news and mitigation activity on a
//! social network, with tools for choosing budgeted incentives over stages.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod hawkes;
pub mod linalg;
pub mod lstd;
pub mod mdp;
pub mod moments;
pub mod optimize;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
