//! Experiment runner and model manager for the `soc-icnn` library.
//!
//! [`experiments`] holds the four runners, [`table`] their CSV/JSON encodings and
//! [`app`] the command-line front end used by the `soc-icnn` binary.

pub mod app;
pub mod config;
pub mod error;
pub mod experiments;
pub mod table;

pub use error::CliError;
