//! Off-policy learning from logged bandit feedback with per-action feature
//! selection and a propensity-weighted neural policy.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod policy;
pub mod propensity;
pub mod relevance;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
