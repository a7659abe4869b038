//! ZigBee-like multi-hop mesh with on-demand flood route discovery.

pub mod frame;
pub mod sim;
pub mod topology;

pub use frame::{decode_mesh, encode_mesh, MeshFrame, MeshKind, NodeId, ReadingPayload, BROADCAST};
pub use sim::{Delivery, Freshness, MeshConfig, MeshError, MeshNet, MeshStats, Route, RouteEntry, SINK};
pub use topology::{LinkParams, Topology, TopologyError};
