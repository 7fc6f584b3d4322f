//! Differentially private training for models with large sparse embedding tables.
//!
//! The crate provides a sparse embedding model with exact per-example
//! gradients, the private selection and noising mechanisms built on top of
//! those gradients, optimizer steps that assemble them into full training
//! algorithms, a numerical privacy accountant, and a synthetic-workload
//! harness that drives end-to-end experiments.

pub mod accounting;
pub mod data;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
