//! Reproducible runs over the slide-deck QA stack: corpus generation,
//! training, evaluation and single-question prediction.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;

pub use config::{Paths, RunConfig};
pub use error::CliError;
pub use experiment::{train_system, EvalReport, Panels, TrainedSystem};
