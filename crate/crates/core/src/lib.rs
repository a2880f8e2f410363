//! Design-weighted low-rank matrix completion for item nonresponse in
//! survey samples, with doubly robust estimation of item means.
//!
//! The pipeline is: fit per-item response models ([`response`]), complete
//! the outcome matrix under a column-space decomposition ([`completion`]),
//! then combine observed values and predictions into doubly robust
//! Horvitz–Thompson-type means ([`estimators`]). [`simulation`] wires these
//! into a Monte Carlo study.

pub mod completion;
pub mod csv_io;
pub mod data;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod linalg;
pub mod response;
pub mod rng;
pub mod sampling;
pub mod simulation;

pub use completion::{fit_completion, CompletionFit, CompletionOptions, GridSpec};
pub use data::{PopulationData, SampleData, TuningTriple};
pub use error::{Error, Result};
pub use estimators::{estimate, EstimateVector, EstimationInput, EstimatorOptions, Method};
pub use exec::Execution;
pub use simulation::{run_monte_carlo, McSummary, SimConfig};
