//! Smart-building sensor platform.
//!
//! Simulated BLE-like and Z-Wave-like devices and a ZigBee-like mesh feed a
//! gateway that persists readings into an append-only CSV store, derives
//! comfort, occupancy, presence and hourly predictions, and drives relays
//! through a rules engine with operator override.

pub mod clock;
pub mod model;
pub mod protosim;
pub mod meshnet;
pub mod tstore;
pub mod analytics;
pub mod automation;
pub mod scenario;
pub mod gateway;
pub mod runtime;
