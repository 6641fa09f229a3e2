//! Node registry and the three communication schemes (topics, services,
//! actions) with reliability and deadline QoS over pluggable transports.

mod bus;
mod link;
mod registry;
mod reliable;
mod transport;
mod types;

use alloc::string::String;

pub use bus::{ActionOutcome, ActionStatus, Bus, BusEvent, BusStats, CallError};
pub use link::{Direction, LinkError, LinkModel};
pub use registry::{NodeHandle, Registry};
pub use reliable::{backoff, RETRANSMIT_BASE, RETRANSMIT_CAP};
pub use transport::{Arrival, Channel, LinkTable, Packet, SimTransport, SubscriptionId, Transport, TransportStats};
pub use types::{Envelope, EnvelopeKind, NodeId, NodeInfo, NodeKind, QosProfile, Reliability};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("node {0} is already registered")]
    DuplicateNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is down")]
    NodeDown(NodeId),
    #[error("{node} does not advertise {name}")]
    NotAdvertised { node: NodeId, name: String },
    #[error("endpoint {0} is already served by another node")]
    DuplicateEndpoint(String),
    #[error("no such service {0}")]
    NoSuchService(String),
    #[error("no such action {0}")]
    NoSuchAction(String),
    #[error("unknown correlation id {0}")]
    UnknownCorrelation(u64),
}
