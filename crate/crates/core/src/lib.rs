//! Simulator and link-level toolkit for single-hop underwater acoustic star
//! networks running a CSMA/CA variant without RTS/CTS.
//!
//! The crate is split along the layers of the system:
//!
//! * [`sim`]: deterministic event queue and seeded random streams.
//! * [`acoustics`]: sonar-equation link budget and propagation delay.
//! * [`phy`]: OFDM transmission modes, packet timing, ESNR and PER.
//! * [`chirp`]: LFM preamble generation, correlation detection and the
//!   two-peak collision test.
//! * [`mac`]: sender/receiver state machines with NACK1/NACK2 feedback.
//! * [`medium`]: shared half-duplex channel and reception outcomes.
//! * [`experiments`]: scenario configuration, network runs, metrics and
//!   sweep runners with CSV output.

pub mod acoustics;
pub mod chirp;
pub mod error;
pub mod experiments;
pub mod mac;
pub mod medium;
pub mod phy;
pub mod sim;

pub use error::{Error, Result};

/// Node identifier. The sink is always node 0.
pub type NodeId = usize;

/// Identifier of the sink in every topology.
pub const SINK: NodeId = 0;
