//! Simulation of time-bin qubit teleportation over fiber in a quantum-relay
//! layout.
//!
//! Quantum amplitudes are computed exactly on a truncated Fock space
//! ([`fock`]), propagated through sources and interferometers ([`optics`]),
//! and turned into detector click statistics both analytically and by seeded
//! Monte Carlo ([`detection`]). [`experiments`] drives the teleportation,
//! Hong-Ou-Mandel, Franson and relay-scaling measurements.

pub mod channels;
pub mod detection;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod fock;
pub mod optics;

pub use error::{Error, Result};
