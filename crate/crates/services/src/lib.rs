//! Runtimes of the four components.
//!
//! Control messages travel as sealed envelopes over TCP, one connection per
//! message with a u32 length prefix. Payload exchange between DEPs uses UDP
//! datagrams tagged [`node::DATA_SEALED`] or, for bypassed frames,
//! [`node::DATA_RAW`]. Each role has a socket-free core ([`pasp::PaspCore`],
//! [`aasp::AaspCore`], [`pdp::PdpCore`], [`dep::DepCore`]) and a `start`
//! function wiring it to its sockets.

pub mod aasp;
pub mod config;
pub mod dep;
pub mod local;
pub mod node;
pub mod pasp;
pub mod pdp;
pub mod service;

pub use config::NodeConfig;
pub use service::{Metrics, ServiceHandle, Sockets};

/// Role of a service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Pasp,
    Aasp,
    Pdp,
    Dep,
}

/// Starts `role` on pre-bound sockets.
pub fn start(role: Role, cfg: NodeConfig, sockets: Sockets) -> Result<ServiceHandle, node::NetError> {
    match role {
        Role::Pasp => pasp::start(cfg, sockets),
        Role::Aasp => aasp::start(cfg, sockets),
        Role::Pdp => pdp::start(cfg, sockets),
        Role::Dep => dep::start(cfg, sockets),
    }
}
