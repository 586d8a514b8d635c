//! Experiment harness for the `vkflex` engine: configuration, canonical
//! problems, sweeps, rate fits, Monge-Ampère verification and export.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod config;
pub mod experiment;
pub mod fit;
pub mod presets;
pub mod problem;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, Outcome};
