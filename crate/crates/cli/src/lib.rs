//! Command-line front end for entanglement audits, judge-bias analysis,
//! verifier ensembles and synthetic data generation.

pub mod commands;
pub mod graph;
pub mod output;
pub mod report;

pub use commands::{run, Cli};
