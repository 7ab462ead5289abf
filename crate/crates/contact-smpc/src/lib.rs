//! Experiment front end for `contact-smpc-core`: TOML configuration, the
//! `solve`, `covcompare`, `montecarlo` and `bench` drivers, CSV tables and
//! plotting scripts.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::CliError;
