//! Leader election in anonymous port-numbered networks.
//!
//! The crate bundles three layers: graph construction and metric oracles
//! (`graph`, `metrics`), a deterministic synchronous message-passing
//! simulator with CONGEST bit accounting (`engine`), and the two election
//! protocols built on top of it (`known_n`, `revocable`).

pub mod engine;
pub mod error;
pub mod graph;
pub mod known_n;
pub mod metrics;
pub mod revocable;
pub mod rng;

pub use error::{Error, Result};
pub use graph::PortGraph;
