//! Synthetic trial generation, estimation and counterfactual evaluation for
//! experiments where caseworkers triage referrals with or without access to
//! an algorithmic risk score.

pub mod cli;
pub mod cohort;
pub mod counterfactual;
pub mod error;
pub mod frame;
pub mod index;
pub mod inference;
pub mod io;
pub mod model;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
