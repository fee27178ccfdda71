//! Deterministic discrete-event simulation of wormhole attacks against
//! wireless ad hoc routing, with baseline detectors and impact metrics.

pub mod adversary;
pub mod aodv;
pub mod cli;
pub mod detection;
pub mod dv;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod packet;
pub mod scenario;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
