//! Simulation and learning toolkit for autonomous UAV infiltration.
//!
//! A friendly UAV must reach a target zone guarded by patrolling enemy UAVs
//! while avoiding their detection radius. The crate provides the simulator,
//! a from-scratch network toolkit, an LSTM enemy-intent predictor, an
//! ensemble of dueling Q-learning experts with advantage-based switching,
//! non-learning baselines, and a Monte-Carlo evaluation harness.

pub mod agents;
pub mod baselines;
pub mod cli;
pub mod environment;
pub mod error;
pub mod evaluation;
pub mod intent;
pub mod neuralnet;
pub mod seeds;
pub mod simcore;

pub use error::{Error, Result};
