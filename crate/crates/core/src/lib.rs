//! Decentralized online mirror descent for multi-agent tracking of a target
//! that moves under linear dynamics plus adversarial noise.
//!
//! Modules, bottom-up: [`geometry`] (mirror maps, feasible sets, the
//! mirror step), [`network`] (graphs, consensus weights, σ₂), [`dynamics`]
//! (target paths), [`losses`] (local losses and stochastic gradients),
//! [`engine`] (the synchronous protocol), [`analysis`] (regret and bounds)
//! and [`harness`] (configuration, presets, artifacts, CLI commands).

pub mod analysis;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod network;
pub mod rng;
pub mod textio;

pub use error::{Error, Result};
