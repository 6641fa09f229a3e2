//! The central node: registry and NTP host, action bookkeeping, and the
//! scripted campaigns, all running inside one simulated [`World`].

pub mod campaign;
pub mod protocol;
pub mod tickets;
pub mod world;

pub use protocol::{CommandFault, DutCommand, DutReply, FaultKind};
pub use tickets::{ActionId, ActionKind, ActionTicket, TicketState, Tickets};
pub use world::{AgvSpec, DutSpec, Mount, NodeSummary, NtpStatus, World, WorldConfig, WorldError, AGV, AGV_BODY, CENTRAL, NTP_SERVICE, REFSYS};
