//! Command line driver for ctcssl: corpus generation, training, pseudo-labelling,
//! selection, scoring and the full experiment grid.

pub mod commands;
pub mod error;
pub mod grid;
pub mod pipeline;
pub mod plan;
pub mod report;

pub use error::CliError;
pub use plan::ExperimentPlan;
