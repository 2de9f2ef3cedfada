//! Asynchronous island-model genetic optimization.
//!
//! Workers breed from their own continuously growing population ledgers,
//! evaluate one individual at a time and exchange results through
//! non-blocking point-to-point messages. Islands trade individuals by
//! migration or pollination; deactivations are reconciled eventually.
//!
//! ```
//! use std::sync::Arc;
//! use propulsion::benchmarks::Benchmark;
//! use propulsion::engine::{self, IslandConfig};
//! use propulsion::propagators::PropagatorConfig;
//! use propulsion::transport::sim::SimOptions;
//!
//! let spec = Benchmark::Sphere.spec();
//! let config = IslandConfig { generations: 32, ..IslandConfig::uniform(2, 2) };
//! let result = engine::run(
//!     spec.space(),
//!     Arc::new(Benchmark::Sphere),
//!     &PropagatorConfig::default(),
//!     config,
//!     SimOptions::default(),
//! )
//! .unwrap();
//! assert_eq!(result.evaluations(), 2 * 2 * 32);
//! ```

pub mod benchmarks;
pub mod cli;
pub mod engine;
pub mod ledger;
pub mod objective;
pub mod propagators;
pub mod rng;
pub mod space;
pub mod transport;
