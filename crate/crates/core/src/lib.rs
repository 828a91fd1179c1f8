//! Simulation and analysis of closed-loop recommender/user dynamics on social
//! networks with confirmation-biased feedback.
//!
//! The crate is organised bottom-up:
//!
//! - [`catalog`] builds item vectors, initial user vectors, the social graph
//!   and the model parameters.
//! - [`dynamics`] runs the stochastic recommend / feedback / update loop.
//! - [`theory`] assembles the linearized matrix dynamics, checks convergence
//!   and solves for the closed-form fixed point.
//! - [`metrics`] computes the echo-chamber and homogenization metrics.
//! - [`mitigation`] plugs the four mitigation strategies into the engine.
//! - [`experiment`] handles ingestion, synthetic data, seeded runs, sweeps,
//!   statistical comparison and file export.

pub mod catalog;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mitigation;
pub mod rng;
pub mod theory;

pub use catalog::{ItemCatalog, ModelParams, SocialGraph, UserStates};
pub use error::{Error, Result};
