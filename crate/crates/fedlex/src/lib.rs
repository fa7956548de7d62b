//! Deterministic federated-learning simulator.
//!
//! Implements federated loss exploration: clients pre-train briefly to
//! measure per-parameter weight deviations, the server aggregates the
//! normalized deviations into a global guidance matrix, and later rounds
//! modulate each client gradient elementwise by that matrix. Four baseline
//! aggregation strategies (weighted averaging, server momentum, direct
//! gradient descent, server-side Adam) and a proximal local objective are
//! provided both plain and guidance-wrapped.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod guidance;
pub mod nn;
pub mod orchestrator;
pub mod rng;

pub use error::{Error, Result};
