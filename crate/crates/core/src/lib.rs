//! Slotted simulator for two-tier hybrid FSO/RF wireless multimedia sensor
//! networks.
//!
//! Cluster heads discover directional multipath routes with probe flooding
//! ([`routing`]), share the radio channel through a grid-scheduled
//! reservation MAC ([`mac`]) and carry QoS-classed traffic ([`traffic`]).
//! The [`engine`] runs scenarios frame by frame, writes an audit-grade trace
//! and checks the MAC's reservation properties against it.

pub mod engine;
pub mod geometry;
pub mod mac;
pub mod routing;
pub mod scenario;
pub mod topology;
pub mod traffic;
