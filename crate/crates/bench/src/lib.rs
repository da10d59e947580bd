//! Simulation, benchmark models and experiment plumbing for `ctmap`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod models;
pub mod simulate;

pub use config::{load_custom_model, ExperimentConfig, Method, ModelChoice};
pub use error::{BenchError, Result};
pub use experiment::{estimate, prepare, run_experiment, run_sweep, BenchRecord, Scenario};
pub use models::{coordinated_turn_model, wiener_velocity_model};
pub use simulate::{coarsen_measurements, simulate, subsample};
