//! Deterministic simulator of asynchronous federated learning under
//! poisoning attacks.
//!
//! The server receives one (possibly stale) update per round. The
//! [`defense`] module screens it with a Lipschitz filter, estimates what
//! every other client would have sent via compact L-BFGS ([`estimator`]),
//! and aggregates with a coordinate-wise median. [`orchestrator`] drives
//! whole experiments and [`attacks`] supplies the adversary.

pub mod attacks;
pub mod defense;
pub mod error;
pub mod estimator;
pub mod history;
pub mod numkit;
pub mod orchestrator;
pub mod taskbench;

pub use error::{Error, Result};
