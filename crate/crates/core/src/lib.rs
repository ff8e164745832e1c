//! Deterministic federated-learning simulator for flexible-trigger backdoor
//! attacks and robust aggregation defenses.
//!
//! Numeric code is generic over [`Scalar`]; experiments run in `f64`, and
//! the aliases below name the concrete types.

pub mod aggregation;
pub mod attack;
pub mod check;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod output;
pub mod rng;
pub mod scalar;
pub mod trigger;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ParamVector64 = nn::ParamVector<f64>;
pub type Network64 = nn::Network<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type TriggerGenerator64 = trigger::TriggerGenerator<f64>;
pub type Aggregator64 = aggregation::Aggregator<f64>;
pub type Simulation64 = orchestrator::Simulation<f64>;
pub type ExperimentOutput64 = orchestrator::ExperimentOutput<f64>;
