//! Uncertainty-aware reward discounting on reward-hacking grid worlds.
//!
//! A tabular Q ensemble learns from synthetic annotators. Actions are ranked
//! by a reliability filter that shrinks the ensemble mean by model
//! disagreement (`sigma_m`) and annotator disagreement (`sigma_h`).

pub mod agent;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod filter;
pub mod harness;
pub mod rng;
pub mod stats;
pub mod supervision;

pub use error::{Error, Result};
