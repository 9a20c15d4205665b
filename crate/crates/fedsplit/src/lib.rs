//! Deterministic simulator for federated learning with model splitting.
//!
//! Clients hide their local models by splitting each one into a visible
//! submodel, which takes part in an average-consensus exchange with the
//! server, and one or more invisible submodels that only ever interact with
//! their own visible counterpart. The quantized variant uploads visible
//! submodels through a stochastic quantizer whose interval shrinks each
//! communication round.
//!
//! Module map:
//! - [`problem`]: synthetic quadratic federated problems and their constants.
//! - [`spectral`]: mixing and transition matrices, eigenvalue gates.
//! - [`splitting`]: the split mechanism and the z-sequence bookkeeping.
//! - [`consensus`]: per-round dynamics, aggregation and traces.
//! - [`quantizer`]: stochastic quantizer, interval scheduling, DP calculator, codec.
//! - [`orchestrator`]: training loops, schedules, theorem constants.
//! - [`privacy_audit`]: adversary views, witness replay, inference attacks.
//! - [`cli`]: the `fedsplit` command-line surface.

pub mod cli;
pub mod consensus;
pub mod error;
pub mod orchestrator;
pub mod privacy_audit;
pub mod problem;
pub mod quantizer;
pub mod rng;
pub mod spectral;
pub mod splitting;
pub mod vecser;

pub use error::{Error, Result};

/// A d-dimensional parameter vector.
pub type ModelVec = nalgebra::DVector<f64>;
