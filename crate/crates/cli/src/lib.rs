//! Scenario-file front end for the `ordstat` binary.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Computation, ScenarioConfig};
pub use error::CliError;
pub use run::{run, Table};
