pub mod error;
pub mod heisenberg;
pub mod quaternion;
pub mod rng;
pub mod kernel;
pub mod analysis;
pub mod quadrature;
pub mod operators;
pub mod experiments;

pub use error::{Error, Result};
pub use experiments::{evaluate, run_scenario, validate_config, RunConfig, RunReport, SCENARIOS};
